//! Synthetic collision traces in three geometric families, plus a linear-probe oracle.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use scenariofuzz::analysis::{extract_collision_pair, CollisionTrajectoryPair};
use scenariofuzz::geometry::Vec2;
use scenariofuzz::scenario::ObjectKind;
use scenariofuzz::sim::*;

pub const HEAD_ON: usize = 0;
pub const SIDE_IMPACT: usize = 1;
pub const REAR_END: usize = 2;

/// Rigid world placement of a locally constructed trace.
#[derive(Debug, Clone, Copy)]
pub struct Placement {
    pub rotation: f64,
    pub offset: Vec2,
}

impl Placement {
    pub const IDENTITY: Placement = Placement {
        rotation: 0.0,
        offset: Vec2 { x: 0.0, y: 0.0 },
    };

    fn apply(&self, p: Vec2) -> Vec2 {
        p.rotate(self.rotation) + self.offset
    }
}

/// Ego drives +x from the origin at `ego_speed` for 10 s; `object(t)` gives the partner's
/// local position; the crash is at the last tick.
pub fn crash_trace(
    ego_speed: f64,
    object: impl Fn(f64) -> Vec2,
    kind: ObjectKind,
    place: Placement,
) -> (Trace, EventLog) {
    let ticks = 200u64;
    let frames: Vec<Frame> = (0..=ticks)
        .map(|tick| {
            let t = tick as f64 * DT;
            let e = place.apply(Vec2::new(ego_speed * t, 0.0));
            let o = place.apply(object(t));
            let o_next = place.apply(object(t + DT));
            let heading = if o_next.dist(o) > 0.0 { (o_next - o).angle() } else { place.rotation };
            Frame {
                tick,
                time: t,
                ego: EgoState {
                    x: e.x,
                    y: e.y,
                    heading: place.rotation,
                    speed: ego_speed,
                    accel: 0.0,
                    steer: 0.0,
                    throttle: 0.3,
                    brake: 0.0,
                },
                objects: vec![ObjectState {
                    x: o.x,
                    y: o.y,
                    heading,
                    speed: o_next.dist(o) / DT,
                    progress: 0.0,
                    active: true,
                }],
                lights: vec![],
            }
        })
        .collect();
    let header = TraceHeader {
        schema_version: 1,
        scenario_hash: "synthetic".into(),
        map: "synthetic".into(),
        agent: "weak".into(),
        agent_version: "1".into(),
        run_seed: 0,
        dt: DT,
        entities: vec![EntityInfo {
            id: 0,
            kind,
            appearance_id: 0,
            color: None,
            length: 4.0,
            width: 1.8,
            height: 1.5,
        }],
    };
    let log = EventLog {
        events: vec![Event::Collision { tick: ticks, entity: 0 }],
        outcome: Outcome::Misbehavior(vec![Misbehavior {
            kind: MisbehaviorKind::Crash,
            tick: ticks,
            detail: MisbehaviorDetail::Crash { entity: 0 },
        }]),
    };
    (Trace { header, frames }, log)
}

/// One member of `family`: the family prototype with Gaussian jitter on speeds (5 %) and
/// lateral offset (0.2 m).
pub fn family_trace<R: Rng>(family: usize, rng: &mut R, place: Placement) -> (Trace, EventLog) {
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut jitter = |mean: f64, sd: f64| mean + sd * unit.sample(rng);
    let ve = jitter(8.0, 0.4);
    let tc = 10.0;
    let hit = ve * tc;
    let off = jitter(0.0, 0.2);
    match family {
        HEAD_ON => {
            let vo = jitter(6.0, 0.3);
            crash_trace(ve, move |t| Vec2::new(hit + 4.0 + vo * (tc - t), off), ObjectKind::Vehicle, place)
        }
        SIDE_IMPACT => {
            let vo = jitter(2.0, 0.1);
            crash_trace(ve, move |t| Vec2::new(hit + 2.0 + off, -2.0 - vo * (tc - t)), ObjectKind::Pedestrian, place)
        }
        REAR_END => {
            let vo = jitter(2.5, 0.125);
            crash_trace(ve, move |t| Vec2::new(hit + 4.5 - vo * (tc - t), off), ObjectKind::Vehicle, place)
        }
        _ => unreachable!("three families"),
    }
}

/// `per_family` members of each family in random world placements; labels are families.
pub fn family_pairs(per_family: usize, seed: u64) -> (Vec<CollisionTrajectoryPair>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..3 * per_family {
        let family = i % 3;
        let place = Placement {
            rotation: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            offset: Vec2::new(rng.random_range(-200.0..200.0), rng.random_range(-200.0..200.0)),
        };
        let (trace, log) = family_trace(family, &mut rng, place);
        pairs.push(extract_collision_pair(&format!("syn-{i:03}"), &trace, &log).unwrap());
        labels.push(family);
    }
    (pairs, labels)
}

/// Training accuracy of a softmax-regression probe on `x`.
pub fn linear_probe_accuracy(x: &Array2<f64>, labels: &[usize], classes: usize) -> f64 {
    let (n, d) = x.dim();
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    let std = x.std_axis(ndarray::Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    let z = (x - &mean) / &std;
    let mut w = Array2::<f64>::zeros((d + 1, classes));
    for _ in 0..2000 {
        let mut grad = Array2::<f64>::zeros((d + 1, classes));
        for i in 0..n {
            let logits: Vec<f64> = (0..classes)
                .map(|c| w[[d, c]] + (0..d).map(|j| z[[i, j]] * w[[j, c]]).sum::<f64>())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..classes {
                let g = e[c] / s - if labels[i] == c { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[[j, c]] += g * z[[i, j]];
                }
                grad[[d, c]] += g;
            }
        }
        w.scaled_add(-0.5 / n as f64, &grad);
    }
    let correct = (0..n)
        .filter(|&i| {
            let best = (0..classes)
                .max_by(|&a, &b| {
                    let la = w[[d, a]] + (0..d).map(|j| z[[i, j]] * w[[j, a]]).sum::<f64>();
                    let lb = w[[d, b]] + (0..d).map(|j| z[[i, j]] * w[[j, b]]).sum::<f64>();
                    la.total_cmp(&lb)
                })
                .unwrap();
            best == labels[i]
        })
        .count();
    correct as f64 / n as f64
}
