use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub dt: f64,
    /// Speeding starts above this multiple of the limit.
    pub speeding_factor: f64,
    pub speeding_dwell_s: f64,
    pub stuck_speed: f64,
    pub stuck_timeout_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            dt: DT,
            speeding_factor: 1.05,
            speeding_dwell_s: 1.0,
            stuck_speed: 0.1,
            stuck_timeout_s: 300.0,
        }
    }
}

/// Incremental misbehavior detector; feed frames in tick order.
pub struct Detector<'a> {
    ctx: &'a MapContext,
    entities: &'a [EntityInfo],
    cfg: DetectorConfig,
    prev_front: Option<Vec2>,
    speeding_since: Option<u64>,
    stuck_since: Option<u64>,
}

impl<'a> Detector<'a> {
    pub fn new(ctx: &'a MapContext, entities: &'a [EntityInfo], cfg: DetectorConfig) -> Self {
        Detector {
            ctx,
            entities,
            cfg,
            prev_front: None,
            speeding_since: None,
            stuck_since: None,
        }
    }

    fn held(&self, since: u64, now: u64, threshold: f64) -> bool {
        (now - since) as f64 * self.cfg.dt >= threshold - 1e-9
    }

    /// Events and misbehaviors raised by `frame`.
    pub fn observe(&mut self, frame: &Frame) -> (Vec<Event>, Vec<Misbehavior>) {
        let mut events = Vec::new();
        let mut found = Vec::new();
        let tick = frame.tick;
        let ego = frame.ego.footprint();

        for (info, state) in self.entities.iter().zip(&frame.objects) {
            if state.active && ego.intersects(&info.footprint(state)) {
                events.push(Event::Collision { tick, entity: info.id });
                found.push(Misbehavior {
                    kind: MisbehaviorKind::Crash,
                    tick,
                    detail: MisbehaviorDetail::Crash { entity: info.id },
                });
            }
        }

        let front = frame.ego.front();
        if let Some(prev) = self.prev_front {
            for line in &self.ctx.stop_lines {
                let crossed = line.signed_distance(prev) < 0.0 && line.signed_distance(front) >= 0.0;
                if crossed && line.lateral(front).abs() <= line.half_width + 0.5 {
                    let phase = frame.light(line.light).unwrap_or_else(|| light_phase(line.light, frame.time));
                    events.push(Event::LightCrossing {
                        tick,
                        light: line.light,
                        phase,
                    });
                    if phase == LightPhase::Red {
                        found.push(Misbehavior {
                            kind: MisbehaviorKind::RedLight,
                            tick,
                            detail: MisbehaviorDetail::RedLight { light: line.light },
                        });
                    }
                }
            }
        }
        self.prev_front = Some(front);

        let limit = self.ctx.speed_limit_at(frame.ego.position());
        let speed = frame.ego.speed;
        if speed > self.cfg.speeding_factor * limit {
            let since = *self.speeding_since.get_or_insert_with(|| {
                events.push(Event::SpeedExceeded { tick, speed, limit });
                tick
            });
            if self.held(since, tick, self.cfg.speeding_dwell_s) {
                found.push(Misbehavior {
                    kind: MisbehaviorKind::Speeding,
                    tick,
                    detail: MisbehaviorDetail::Speeding { speed, limit },
                });
            }
        } else {
            self.speeding_since = None;
        }

        if let Some(segment) = self.ctx.solid_crossing(&ego) {
            events.push(Event::LaneCrossing { tick, segment });
            found.push(Misbehavior {
                kind: MisbehaviorKind::LaneInvasion,
                tick,
                detail: MisbehaviorDetail::LaneInvasion { segment },
            });
        }

        if speed < self.cfg.stuck_speed {
            let since = *self.stuck_since.get_or_insert(tick);
            if self.held(since, tick, self.cfg.stuck_timeout_s) {
                found.push(Misbehavior {
                    kind: MisbehaviorKind::Stuck,
                    tick,
                    detail: MisbehaviorDetail::Stuck { since_tick: since },
                });
            }
        } else {
            self.stuck_since = None;
        }

        (events, found)
    }
}

/// Replay the detector over a recorded trace. Returns all events up to and including the
/// first misbehaving tick, and the misbehaviors of that tick.
pub fn detect_misbehavior(ctx: &MapContext, trace: &Trace, cfg: DetectorConfig) -> (Vec<Event>, Vec<Misbehavior>) {
    let mut det = Detector::new(ctx, &trace.header.entities, cfg);
    let mut events = Vec::new();
    for f in &trace.frames {
        let (e, m) = det.observe(f);
        events.extend(e);
        if !m.is_empty() {
            return (events, m);
        }
    }
    (events, Vec::new())
}
