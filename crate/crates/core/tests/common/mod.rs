//! Hand-built traces shared by the simulator and acceptance suites.
#![allow(dead_code)]

use scenariofuzz::fixtures;
use scenariofuzz::scenario::ObjectKind;
use scenariofuzz::sim::*;

pub use scenariofuzz::sim::DT;

pub mod analysis;
pub mod fuzz;
pub mod sem;

pub fn context(map: &str) -> MapContext {
    MapContext::new(fixtures::network(map).unwrap(), 5.0).unwrap()
}

pub fn ego(x: f64, y: f64, heading: f64, speed: f64) -> EgoState {
    EgoState {
        x,
        y,
        heading,
        speed,
        accel: 0.0,
        steer: 0.0,
        throttle: 0.0,
        brake: 0.0,
    }
}

pub fn car(id: u32, length: f64, width: f64) -> EntityInfo {
    EntityInfo {
        id,
        kind: ObjectKind::Vehicle,
        appearance_id: 0,
        color: None,
        length,
        width,
        height: 1.5,
    }
}

pub fn still(x: f64, y: f64) -> ObjectState {
    ObjectState {
        x,
        y,
        heading: 0.0,
        speed: 0.0,
        progress: 0.0,
        active: true,
    }
}

pub fn trace(map: &str, entities: Vec<EntityInfo>, frames: Vec<Frame>) -> Trace {
    Trace {
        header: TraceHeader {
            schema_version: 1,
            scenario_hash: "crafted".into(),
            map: map.into(),
            agent: "crafted".into(),
            agent_version: "1".into(),
            run_seed: 0,
            dt: DT,
            entities,
        },
        frames,
    }
}

pub fn frame(tick: u64, ego: EgoState, objects: Vec<ObjectState>, lights: Vec<LightState>) -> Frame {
    Frame {
        tick,
        time: tick as f64 * DT,
        ego,
        objects,
        lights,
    }
}

/// A crafted trace, the kind it must trigger, and the tick expected by construction.
pub struct OracleCase {
    pub name: &'static str,
    pub map: &'static str,
    pub trace: Trace,
    pub config: DetectorConfig,
    /// `None` for near-miss twins: the kind must not fire anywhere in the trace.
    pub expect_tick: Option<u64>,
    pub kind: MisbehaviorKind,
}

const LANE_Y: f64 = -1.75;
const HALF_LEN: f64 = 2.25;
const HALF_WID: f64 = 0.9;

/// Ego drives +x along lane -1 of `straight_road` at 5 m/s towards a 4 m x 2 m box.
fn crash_pair() -> [OracleCase; 2] {
    let (obj_len, obj_wid) = (4.0, 2.0);
    let rear = 17.1;
    let make = |y_obj: f64| {
        let frames = (0..100)
            .map(|k| {
                frame(
                    k,
                    ego(5.0 + 0.25 * k as f64, LANE_Y, 0.0, 5.0),
                    vec![still(rear + obj_len / 2.0, y_obj)],
                    vec![],
                )
            })
            .collect();
        trace("straight_road", vec![car(0, obj_len, obj_wid)], frames)
    };
    // front(k) = 7.25 + 0.25 k first exceeds the box rear at k = ceil((17.1 - 7.25) / 0.25)
    let tick = ((rear - (5.0 + HALF_LEN)) / 0.25).ceil() as u64;
    [
        OracleCase {
            name: "crash",
            map: "straight_road",
            trace: make(LANE_Y),
            config: DetectorConfig::default(),
            expect_tick: Some(tick),
            kind: MisbehaviorKind::Crash,
        },
        OracleCase {
            name: "crash near miss (1 m side gap)",
            map: "straight_road",
            trace: make(LANE_Y + HALF_WID + 1.0 + obj_wid / 2.0),
            config: DetectorConfig::default(),
            expect_tick: None,
            kind: MisbehaviorKind::Crash,
        },
    ]
}

/// Ego approaches the light-1 stop line of `cross_small` (x = -7 on lane -1 of the west arm).
fn red_light_pair() -> [OracleCase; 2] {
    let make = |phase: LightPhase| {
        let frames = (0..95)
            .map(|k| {
                frame(
                    k,
                    ego(-30.0 + 0.25 * k as f64, LANE_Y, 0.0, 5.0),
                    vec![],
                    vec![LightState { id: 1, phase }],
                )
            })
            .collect();
        trace("cross_small", vec![], frames)
    };
    let tick = ((-7.0 - (-30.0 + HALF_LEN)) / 0.25).ceil() as u64;
    [
        OracleCase {
            name: "red light",
            map: "cross_small",
            trace: make(LightPhase::Red),
            config: DetectorConfig::default(),
            expect_tick: Some(tick),
            kind: MisbehaviorKind::RedLight,
        },
        OracleCase {
            name: "red light twin (crossing on green)",
            map: "cross_small",
            trace: make(LightPhase::Green),
            config: DetectorConfig::default(),
            expect_tick: None,
            kind: MisbehaviorKind::RedLight,
        },
    ]
}

/// Speed profile: 10 m/s, then 15 m/s (above 1.05 x 50 km/h) over ticks [10, 10 + n), then 10 m/s.
fn speeding_trace(n: u64) -> Trace {
    let mut x = 2.0;
    let frames = (0..60)
        .map(|k| {
            let v = if (10..10 + n).contains(&k) { 15.0 } else { 10.0 };
            let f = frame(k, ego(x, LANE_Y, 0.0, v), vec![], vec![]);
            x += v * DT;
            f
        })
        .collect();
    trace("straight_road", vec![], frames)
}

fn speeding_pair() -> [OracleCase; 2] {
    // 1.1 s over the limit is 23 frames; the 1.0 s dwell completes 20 ticks after onset.
    let over = (1.1 / DT).round() as u64 + 1;
    let near = (0.9 / DT).round() as u64 + 1;
    [
        OracleCase {
            name: "speeding (1.1 s)",
            map: "straight_road",
            trace: speeding_trace(over),
            config: DetectorConfig::default(),
            expect_tick: Some(10 + (1.0 / DT).round() as u64),
            kind: MisbehaviorKind::Speeding,
        },
        OracleCase {
            name: "speeding twin (0.9 s)",
            map: "straight_road",
            trace: speeding_trace(near),
            config: DetectorConfig::default(),
            expect_tick: None,
            kind: MisbehaviorKind::Speeding,
        },
    ]
}

/// Ego drifts left at 0.02 m per tick towards the solid centre line (y = 0), stopping at `y_max`.
fn drift_trace(y_max: f64) -> Trace {
    let frames = (0..80)
        .map(|k| {
            let y = (LANE_Y + 0.02 * k as f64).min(y_max);
            frame(k, ego(10.0 + 0.25 * k as f64, y, 0.0, 5.0), vec![], vec![])
        })
        .collect();
    trace("straight_road", vec![], frames)
}

fn lane_pair() -> [OracleCase; 2] {
    // left edge y + 0.9 first reaches the line at k = ceil((-0.9 - -1.75) / 0.02)
    let tick = ((-HALF_WID - LANE_Y) / 0.02 - 1e-9).ceil() as u64;
    [
        OracleCase {
            name: "lane invasion",
            map: "straight_road",
            trace: drift_trace(1.0),
            config: DetectorConfig::default(),
            expect_tick: Some(tick),
            kind: MisbehaviorKind::LaneInvasion,
        },
        OracleCase {
            name: "lane invasion twin (stops 0.1 m short)",
            map: "straight_road",
            trace: drift_trace(-HALF_WID - 0.1),
            config: DetectorConfig::default(),
            expect_tick: None,
            kind: MisbehaviorKind::LaneInvasion,
        },
    ]
}

/// Ego stands still for `still_ticks` frames, then rolls forward at 1 m/s.
fn stuck_trace(still_ticks: u64) -> Trace {
    let mut x = 10.0;
    let frames = (0..700)
        .map(|k| {
            let v = if k < still_ticks { 0.0 } else { 1.0 };
            let f = frame(k, ego(x, LANE_Y, 0.0, v), vec![], vec![]);
            x += v * DT;
            f
        })
        .collect();
    trace("straight_road", vec![], frames)
}

fn stuck_pair() -> [OracleCase; 2] {
    let cfg = DetectorConfig {
        stuck_timeout_s: 30.0,
        ..DetectorConfig::default()
    };
    let timeout_ticks = (30.0 / DT).round() as u64;
    [
        OracleCase {
            name: "stuck (30 s)",
            map: "straight_road",
            trace: stuck_trace(650),
            config: cfg,
            expect_tick: Some(timeout_ticks),
            kind: MisbehaviorKind::Stuck,
        },
        OracleCase {
            name: "stuck twin (29.9 s)",
            map: "straight_road",
            trace: stuck_trace(timeout_ticks - 1),
            config: cfg,
            expect_tick: None,
            kind: MisbehaviorKind::Stuck,
        },
    ]
}

pub fn oracle_cases() -> Vec<OracleCase> {
    let mut out = Vec::new();
    out.extend(crash_pair());
    out.extend(red_light_pair());
    out.extend(speeding_pair());
    out.extend(lane_pair());
    out.extend(stuck_pair());
    out
}

/// Check one case. Returns a description of the failure, if any.
pub fn check_oracle(case: &OracleCase, ctx: &MapContext) -> Result<(), String> {
    let (_, found) = detect_misbehavior(ctx, &case.trace, case.config);
    let mut det = Detector::new(ctx, &case.trace.header.entities, case.config);
    let mut first_of_kind = None;
    for f in &case.trace.frames {
        let (_, m) = det.observe(f);
        if first_of_kind.is_none() && m.iter().any(|m| m.kind == case.kind) {
            first_of_kind = Some(f.tick);
        }
    }
    match case.expect_tick {
        Some(t) => {
            let ok = found.iter().any(|m| m.kind == case.kind && m.tick == t);
            if ok && found.iter().all(|m| m.tick == t) {
                Ok(())
            } else {
                Err(format!("expected {:?}@{t}, got {found:?}", case.kind))
            }
        }
        None => match first_of_kind {
            None => Ok(()),
            Some(t) => Err(format!("{:?} fired at tick {t}", case.kind)),
        },
    }
}
