use super::*;

pub const HARD_ACCEL: f64 = 3.0;
pub const STEER_DEADBAND: f64 = 0.1;
pub const CLEARANCE_SCALE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub score: f64,
    pub hard_accels: usize,
    pub hard_brakes: usize,
    pub steer_reversals: usize,
    /// Smallest ego-to-object box distance; `None` when no object was ever present.
    pub min_clearance: Option<f64>,
}

fn onsets(flags: impl Iterator<Item = bool>) -> usize {
    let mut prev = false;
    let mut n = 0;
    for f in flags {
        if f && !prev {
            n += 1;
        }
        prev = f;
    }
    n
}

/// Ride-quality score in [0, 100]; lower means a riskier run.
///
/// `100 - min(100, 5*hard_accels + 5*hard_brakes + 2*steer_reversals + 50*max(0, 1 - c/5))`
/// where hard events are onsets of |a| > 3 m/s^2 and `c` is the minimum clearance.
pub fn driving_score(trace: &Trace) -> Result<ScoreBreakdown, SimError> {
    if trace.frames.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let hard_accels = onsets(trace.frames.iter().map(|f| f.ego.accel > HARD_ACCEL));
    let hard_brakes = onsets(trace.frames.iter().map(|f| f.ego.accel < -HARD_ACCEL));
    let mut steer_reversals = 0;
    let mut last_sign = 0.0;
    for f in &trace.frames {
        if f.ego.steer.abs() >= STEER_DEADBAND {
            let sign = f.ego.steer.signum();
            if last_sign != 0.0 && sign != last_sign {
                steer_reversals += 1;
            }
            last_sign = sign;
        }
    }
    let mut min_clearance: Option<f64> = None;
    for f in &trace.frames {
        let ego = f.ego.footprint();
        for (info, s) in trace.header.entities.iter().zip(&f.objects) {
            if s.active {
                let d = ego.distance(&info.footprint(s));
                min_clearance = Some(min_clearance.map_or(d, |m| m.min(d)));
            }
        }
    }
    let proximity = min_clearance.map_or(0.0, |c| (1.0 - c / CLEARANCE_SCALE).max(0.0));
    let penalty = 5.0 * hard_accels as f64 + 5.0 * hard_brakes as f64 + 2.0 * steer_reversals as f64 + 50.0 * proximity;
    Ok(ScoreBreakdown {
        score: 100.0 - penalty.min(100.0),
        hard_accels,
        hard_brakes,
        steer_reversals,
        min_clearance,
    })
}
