use super::AnalysisError;
use crate::geometry::{cumulative_length, point_at_length, Vec2};
use crate::scenario::ObjectKind;
use crate::sim::{EventLog, MisbehaviorDetail, Trace};
use serde::{Deserialize, Serialize};

pub const WINDOW_S: f64 = 8.0;
pub const RESAMPLE_POINTS: usize = 32;
/// Flattened length of a pair: two polylines of 32 (x, y) points.
pub const PAIR_FEATURES: usize = 4 * RESAMPLE_POINTS;

/// Ego and collision-partner trajectories over the last seconds before a crash, in the
/// ego frame at the start of the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionTrajectoryPair {
    pub scenario_id: String,
    pub ego: Vec<[f64; 2]>,
    pub object: Vec<[f64; 2]>,
    pub collision_tick: u64,
    pub object_kind: ObjectKind,
    pub appearance_id: u8,
}

impl CollisionTrajectoryPair {
    /// Ego points then object points, x before y.
    pub fn flatten(&self) -> Vec<f64> {
        self.ego.iter().chain(&self.object).flat_map(|p| *p).collect()
    }
}

/// `n` points spaced evenly by arc length; all copies of the first point when the
/// polyline has no length.
pub fn resample(points: &[Vec2], n: usize) -> Vec<[f64; 2]> {
    assert!(!points.is_empty(), "resampling needs a point");
    let cum = cumulative_length(points);
    let total = *cum.last().unwrap();
    (0..n)
        .map(|i| {
            let s = if n > 1 { total * i as f64 / (n - 1) as f64 } else { 0.0 };
            let p = if total > 0.0 { point_at_length(points, &cum, s).0 } else { points[0] };
            [p.x, p.y]
        })
        .collect()
}

pub fn extract_collision_pair(id: &str, trace: &Trace, events: &EventLog) -> Result<CollisionTrajectoryPair, AnalysisError> {
    let (tick, entity) = events
        .outcome
        .misbehaviors()
        .iter()
        .find_map(|m| match m.detail {
            MisbehaviorDetail::Crash { entity } => Some((m.tick, entity)),
            _ => None,
        })
        .ok_or_else(|| AnalysisError::NoCollision(id.to_string()))?;
    let info = trace
        .header
        .entities
        .iter()
        .find(|e| e.id == entity)
        .ok_or_else(|| AnalysisError::Malformed(format!("{id}: crash with unknown entity {entity}")))?;
    let end = trace
        .frames
        .iter()
        .position(|f| f.tick == tick)
        .ok_or_else(|| AnalysisError::Malformed(format!("{id}: no frame at collision tick {tick}")))?;
    let t_end = trace.frames[end].time;
    let window: Vec<_> = trace.frames[..=end]
        .iter()
        .filter(|f| f.time >= t_end - WINDOW_S - 1e-9)
        .collect();
    let origin = window[0].ego.position();
    let theta = window[0].ego.heading;
    let local = |p: Vec2| (p - origin).rotate(-theta);
    let ego: Vec<Vec2> = window.iter().map(|f| local(f.ego.position())).collect();
    let object: Vec<Vec2> = window
        .iter()
        .filter_map(|f| f.objects.get(entity as usize).filter(|o| o.active))
        .map(|o| local(o.position()))
        .collect();
    if object.is_empty() {
        return Err(AnalysisError::Malformed(format!("{id}: entity {entity} never active in the window")));
    }
    Ok(CollisionTrajectoryPair {
        scenario_id: id.to_string(),
        ego: resample(&ego, RESAMPLE_POINTS),
        object: resample(&object, RESAMPLE_POINTS),
        collision_tick: tick,
        object_kind: info.kind,
        appearance_id: info.appearance_id,
    })
}
