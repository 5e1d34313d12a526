//! Deterministic 2D traffic simulator, reference agents and misbehavior detector.

mod agent;
mod detector;
mod run;
mod score;
pub mod stdio;
mod trace;
mod world;

pub use agent::{agent_by_name, Agent, AgentFault, BasicAgent, DetectedObject, EpisodeInfo, IdleAgent, Observation, Perception, VisibleLight, AGENT_NAMES};
pub use detector::{detect_misbehavior, Detector, DetectorConfig};
pub use run::{run_scenario, RunLimits, RunResult};
pub use score::{driving_score, ScoreBreakdown};
pub use trace::{Event, EventLog, Frame, Trace, TraceHeader};
pub use world::{
    friction_at, instantiate_scenario, light_phase, step_ego, step_objects, step_world, MapContext, SimScenario, StopLine,
    AUTOPILOT_HEADWAY, MAX_BRAKE_DECEL, MAX_STEER_RAD, MAX_THROTTLE_ACCEL, WHEELBASE,
};

pub use crate::mutation::{EGO_LENGTH, EGO_WIDTH};

use crate::geometry::{Obb, Vec2};
use crate::map::{SignalId, WaypointId};
use crate::scenario::ObjectKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("entities {a:?} and {b} overlap at spawn")]
    SpawnCollision { a: Option<u32>, b: u32 },
    #[error("scenario references unknown waypoint {0}")]
    UnknownWaypoint(WaypointId),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("agent fault: {0}")]
    Agent(#[from] AgentFault),
    #[error("trace io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub throttle: f64,
    pub brake: f64,
    pub steer: f64,
}

impl Control {
    pub fn clamped(self) -> Control {
        let fix = |v: f64, lo: f64, hi: f64| if v.is_finite() { v.clamp(lo, hi) } else { 0.0 };
        Control {
            throttle: fix(self.throttle, 0.0, 1.0),
            brake: fix(self.brake, 0.0, 1.0),
            steer: fix(self.steer, -1.0, 1.0),
        }
    }

    pub fn full_brake() -> Control {
        Control {
            throttle: 0.0,
            brake: 1.0,
            steer: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub accel: f64,
    /// Control applied on the step that produced this state.
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl EgoState {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn footprint(&self) -> Obb {
        Obb::new(self.position(), self.heading, EGO_LENGTH, EGO_WIDTH)
    }

    pub fn front(&self) -> Vec2 {
        self.position() + Vec2::from_angle(self.heading) * (EGO_LENGTH / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    /// Arc length travelled along the object's plan.
    pub progress: f64,
    pub active: bool,
}

impl ObjectState {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LightPhase {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightState {
    pub id: SignalId,
    pub phase: LightPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Puddle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub friction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub time: f64,
    pub ego: EgoState,
    pub objects: Vec<ObjectState>,
    pub lights: Vec<LightState>,
    pub puddles: Vec<Puddle>,
}

impl WorldState {
    pub fn light(&self, id: SignalId) -> Option<LightPhase> {
        self.lights.iter().find(|l| l.id == id).map(|l| l.phase)
    }
}

/// Static description of a scenario object as seen by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityInfo {
    pub id: u32,
    pub kind: ObjectKind,
    pub appearance_id: u8,
    pub color: Option<[u8; 3]>,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl EntityInfo {
    pub fn footprint(&self, s: &ObjectState) -> Obb {
        Obb::new(s.position(), s.heading, self.length, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MisbehaviorKind {
    Crash,
    RedLight,
    Speeding,
    LaneInvasion,
    Stuck,
}

impl MisbehaviorKind {
    pub const ALL: [MisbehaviorKind; 5] = [
        MisbehaviorKind::Crash,
        MisbehaviorKind::RedLight,
        MisbehaviorKind::Speeding,
        MisbehaviorKind::LaneInvasion,
        MisbehaviorKind::Stuck,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MisbehaviorDetail {
    Crash { entity: u32 },
    RedLight { light: SignalId },
    Speeding { speed: f64, limit: f64 },
    LaneInvasion { segment: usize },
    Stuck { since_tick: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misbehavior {
    pub kind: MisbehaviorKind,
    pub tick: u64,
    pub detail: MisbehaviorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Misbehavior(Vec<Misbehavior>),
    Completed,
    HorizonExpired,
}

impl Outcome {
    pub fn is_error(&self) -> bool {
        matches!(self, Outcome::Misbehavior(_))
    }

    pub fn misbehaviors(&self) -> &[Misbehavior] {
        match self {
            Outcome::Misbehavior(m) => m,
            _ => &[],
        }
    }
}
