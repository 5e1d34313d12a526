use super::*;
use crate::geometry::project_onto_polyline;
use crate::scenario::ConcreteScenario;
use rand_distr::{Distribution, Normal};

/// Standard deviation of the steering actuator noise.
pub const STEER_NOISE_STD: f64 = 0.002;
/// Route lookahead handed to the agent.
pub const ROUTE_HORIZON: f64 = 80.0;
/// The mission counts as complete this close to the end of the route.
pub const COMPLETION_TOLERANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunLimits {
    pub horizon_s: f64,
    pub stuck_timeout_s: f64,
    pub dt: f64,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            horizon_s: 60.0,
            stuck_timeout_s: 300.0,
            dt: DT,
        }
    }
}

impl RunLimits {
    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            dt: self.dt,
            stuck_timeout_s: self.stuck_timeout_s,
            ..DetectorConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub trace: Trace,
    pub events: EventLog,
    /// Driving score of the run; meaningful for clean runs.
    pub score: ScoreBreakdown,
}

/// Monotone arc-length position of the ego along its route.
struct RouteTracker {
    s: f64,
}

impl RouteTracker {
    fn update(&mut self, sim: &SimScenario, p: Vec2) {
        let pts = &sim.route;
        let cum = &sim.route_cum;
        if pts.len() < 2 {
            return;
        }
        let lo = cum.partition_point(|&c| c < self.s - 5.0).saturating_sub(1);
        let hi = (cum.partition_point(|&c| c <= self.s + 15.0) + 1).min(pts.len());
        let (s, _) = project_onto_polyline(&pts[lo..hi], &shifted(&cum[lo..hi]), p);
        self.s = self.s.max(cum[lo] + s);
    }
}

fn shifted(cum: &[f64]) -> Vec<f64> {
    cum.iter().map(|c| c - cum[0]).collect()
}

fn route_ahead(sim: &SimScenario, s: f64) -> Vec<Vec2> {
    let (p, _) = crate::geometry::point_at_length(&sim.route, &sim.route_cum, s);
    let mut out = vec![p];
    for (q, &c) in sim.route.iter().zip(&sim.route_cum) {
        if c > s + 1e-9 {
            if c > s + ROUTE_HORIZON {
                break;
            }
            out.push(*q);
        }
    }
    out
}

fn observe(
    ctx: &MapContext,
    sim: &SimScenario,
    world: &WorldState,
    s: f64,
    perception: &Perception,
    weather: &crate::scenario::WeatherParams,
) -> Observation {
    let ego = world.ego.position();
    let objects = sim
        .entities
        .iter()
        .zip(&world.objects)
        .filter(|(info, st)| st.active && perception.detects(info, st.position().dist(ego), weather))
        .map(|(info, st)| DetectedObject {
            id: info.id,
            kind: info.kind,
            x: st.x,
            y: st.y,
            heading: st.heading,
            speed: st.speed,
            length: info.length,
            width: info.width,
            height: info.height,
        })
        .collect();
    let light = sim
        .route_ids
        .iter()
        .zip(&sim.route_cum)
        .filter(|(_, &c)| c >= s && c - s <= perception.effective_range(weather))
        .find_map(|(&id, &c)| ctx.stop_line_at(id).map(|l| (l.light, c - s)))
        .map(|(id, distance)| VisibleLight {
            id,
            phase: world.light(id).unwrap_or_else(|| light_phase(id, world.time)),
            distance,
        });
    Observation {
        tick: world.tick,
        time: world.time,
        ego: world.ego,
        route: route_ahead(sim, s),
        route_remaining: (sim.route_length() - s).max(0.0),
        objects,
        light,
        speed_limit: ctx.speed_limit_at(ego),
        weather: *weather,
    }
}

/// Run `agent` on `sc` until the first misbehavior, mission completion or the horizon.
pub fn run_scenario(
    sc: &ConcreteScenario,
    ctx: &MapContext,
    agent: &mut dyn Agent,
    limits: RunLimits,
    run_seed: u64,
) -> Result<RunResult, SimError> {
    let (sim, mut world) = instantiate_scenario(sc, ctx)?;
    let perception = agent.perception();
    agent.reset(&EpisodeInfo {
        map: sc.map.clone(),
        dt: limits.dt,
        route: sim.route.clone(),
    })?;
    let header = TraceHeader {
        schema_version: super::trace::TRACE_SCHEMA_VERSION,
        scenario_hash: sc.hash(),
        map: sc.map.clone(),
        agent: agent.name().to_string(),
        agent_version: agent.version(),
        run_seed,
        dt: limits.dt,
        entities: sim.entities.clone(),
    };
    let mut rng = crate::rng::stream(run_seed, &[0x5157]);
    let noise = Normal::new(0.0, STEER_NOISE_STD).expect("valid std");
    let mut detector = Detector::new(ctx, &sim.entities, limits.detector_config());
    let mut tracker = RouteTracker { s: 0.0 };
    let total = sim.route_length();
    let max_ticks = (limits.horizon_s / limits.dt).round() as u64;

    let mut frames = vec![Frame::from_world(&world)];
    let (mut events, first) = detector.observe(&frames[0]);
    let mut outcome = if first.is_empty() { None } else { Some(Outcome::Misbehavior(first)) };

    while outcome.is_none() {
        if world.tick >= max_ticks {
            outcome = Some(Outcome::HorizonExpired);
            break;
        }
        let obs = observe(ctx, &sim, &world, tracker.s, &perception, &sc.weather);
        let mut control = agent.control(&obs)?.clamped();
        control.steer = (control.steer + noise.sample(&mut rng)).clamp(-1.0, 1.0);
        world = step_world(ctx, &sim, &world, control, limits.dt);
        tracker.update(&sim, world.ego.position());
        let frame = Frame::from_world(&world);
        let (e, m) = detector.observe(&frame);
        events.extend(e);
        frames.push(frame);
        if !m.is_empty() {
            outcome = Some(Outcome::Misbehavior(m));
        } else if tracker.s >= total - COMPLETION_TOLERANCE {
            outcome = Some(Outcome::Completed);
        }
    }

    let trace = Trace { header, frames };
    let score = driving_score(&trace)?;
    Ok(RunResult {
        trace,
        events: EventLog {
            events,
            outcome: outcome.expect("loop sets an outcome"),
        },
        score,
    })
}
