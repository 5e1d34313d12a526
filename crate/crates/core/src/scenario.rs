//! Executable test cases produced by the mutators.

use crate::corpus::{Direction, ScenarioSeed};
use crate::map::WaypointId;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use thiserror::Error;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("scenario references waypoint {0} outside its seed")]
    ForeignWaypoint(WaypointId),
    #[error("path of {0} is not a sub-path of a seed path")]
    ForeignPath(String),
    #[error("entities share spawn waypoint {0}")]
    SharedSpawn(WaypointId),
    #[error("attribute {name} out of range: {value}")]
    OutOfRange { name: String, value: f64 },
    #[error("scenario belongs to seed {found}, expected {expected}")]
    WrongSeed { expected: u32, found: u32 },
    #[error("scenario json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherParams {
    pub cloud: f64,
    pub rain: f64,
    pub ponding: f64,
    pub wind: f64,
    pub fog: f64,
    pub wetness: f64,
    /// degrees, [0, 360)
    pub sun_angle: f64,
    /// degrees, [-90, 90]
    pub sun_altitude: f64,
}

impl Default for WeatherParams {
    fn default() -> Self {
        WeatherParams {
            cloud: 0.0,
            rain: 0.0,
            ponding: 0.0,
            wind: 0.0,
            fog: 0.0,
            wetness: 0.0,
            sun_angle: 0.0,
            sun_altitude: 45.0,
        }
    }
}

impl WeatherParams {
    pub const NAMES: [&'static str; 8] = [
        "cloud",
        "rain",
        "ponding",
        "wind",
        "fog",
        "wetness",
        "sun_angle",
        "sun_altitude",
    ];

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.cloud,
            self.rain,
            self.ponding,
            self.wind,
            self.fog,
            self.wetness,
            self.sun_angle,
            self.sun_altitude,
        ]
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        WeatherParams {
            cloud: v[0],
            rain: v[1],
            ponding: v[2],
            wind: v[3],
            fog: v[4],
            wetness: v[5],
            sun_angle: v[6],
            sun_altitude: v[7],
        }
    }

    /// (min, max) and step of each field, in [`Self::NAMES`] order.
    pub fn ranges() -> [(f64, f64, f64); 8] {
        let pct = (0.0, 100.0, 1.0);
        [pct, pct, pct, pct, pct, pct, (0.0, 359.0, 1.0), (-90.0, 90.0, 1.0)]
    }

    pub fn is_valid(&self) -> bool {
        self.to_array()
            .iter()
            .zip(Self::ranges())
            .all(|(v, (lo, hi, _))| *v >= lo && *v <= hi)
            && self.sun_angle < 360.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectKind {
    Vehicle,
    Pedestrian,
}

/// Physical style of an actor. Ids 0-12 are vehicles, 13-25 pedestrians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Appearance {
    pub id: u8,
    pub name: &'static str,
    pub kind: ObjectKind,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

const fn app(id: u8, name: &'static str, kind: ObjectKind, l: f64, w: f64, h: f64) -> Appearance {
    Appearance {
        id,
        name,
        kind,
        length: l,
        width: w,
        height: h,
    }
}

use ObjectKind::{Pedestrian as P, Vehicle as V};

pub const APPEARANCES: [Appearance; 26] = [
    app(0, "compact_car", V, 3.9, 1.7, 1.45),
    app(1, "sedan", V, 4.6, 1.8, 1.45),
    app(2, "hatchback", V, 4.1, 1.75, 1.5),
    app(3, "suv", V, 4.8, 1.95, 1.75),
    app(4, "pickup", V, 5.3, 2.0, 1.85),
    app(5, "van", V, 5.0, 2.0, 2.2),
    app(6, "box_truck", V, 7.5, 2.4, 3.2),
    app(7, "bus", V, 11.0, 2.5, 3.1),
    app(8, "sports_car", V, 4.4, 1.9, 1.15),
    app(9, "micro_car", V, 2.7, 1.5, 1.5),
    app(10, "police_car", V, 4.9, 1.9, 1.5),
    app(11, "bicycle_rider", V, 1.8, 0.6, 1.7),
    app(12, "motorcycle_rider", V, 2.1, 0.8, 1.5),
    app(13, "adult_walking", P, 0.5, 0.6, 1.75),
    app(14, "adult_tall", P, 0.5, 0.6, 1.9),
    app(15, "adult_short", P, 0.5, 0.55, 1.55),
    app(16, "elderly", P, 0.5, 0.6, 1.65),
    app(17, "jogger", P, 0.55, 0.6, 1.75),
    app(18, "adult_with_bag", P, 0.6, 0.8, 1.75),
    app(19, "adult_with_umbrella", P, 0.9, 0.9, 1.9),
    app(20, "worker", P, 0.55, 0.65, 1.8),
    app(21, "teen", P, 0.45, 0.5, 1.6),
    app(22, "child", P, 0.35, 0.4, 0.9),
    app(23, "toddler", P, 0.3, 0.35, 0.7),
    app(24, "adult_crouching", P, 0.7, 0.6, 1.0),
    app(25, "adult_lying", P, 1.8, 0.5, 0.4),
];

pub const VEHICLE_STYLES: u8 = 13;
pub const PEDESTRIAN_STYLES: u8 = 13;

impl Appearance {
    pub fn get(id: u8) -> Option<&'static Appearance> {
        APPEARANCES.get(id as usize)
    }

    pub fn for_kind(kind: ObjectKind, index: u8) -> &'static Appearance {
        let base = match kind {
            ObjectKind::Vehicle => 0,
            ObjectKind::Pedestrian => VEHICLE_STYLES,
        };
        &APPEARANCES[(base + index) as usize]
    }
}

/// Vehicle paint colours; index 0 is red.
pub const COLORS: [[u8; 3]; 8] = [
    [200, 20, 20],
    [240, 240, 240],
    [20, 20, 20],
    [128, 128, 128],
    [20, 60, 180],
    [20, 140, 60],
    [230, 200, 30],
    [120, 30, 140],
];

pub fn is_reddish(c: [u8; 3]) -> bool {
    let [r, g, b] = c.map(f64::from);
    r > 150.0 && r > 2.0 * g && r > 2.0 * b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TurnClass {
    Left,
    Right,
    Straight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverSegment {
    pub length: f64,
    pub class: TurnClass,
    /// Heading change of the underlying path over this segment, degrees.
    pub base_turn_deg: f64,
    /// Perturbed heading change the object actually performs, degrees.
    pub turn_deg: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ObjectAction {
    Immobile,
    Linear { speed: f64 },
    Maneuver { segments: Vec<ManeuverSegment> },
    Autopilot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ObjectPath {
    /// A sub-path of one of the seed's corpus paths.
    Waypoints(Vec<WaypointId>),
    /// A straight road crossing between two waypoints on opposite lanes.
    Crossing { from: WaypointId, to: WaypointId },
}

impl ObjectPath {
    pub fn waypoint_ids(&self) -> Vec<WaypointId> {
        match self {
            ObjectPath::Waypoints(w) => w.clone(),
            ObjectPath::Crossing { from, to } => vec![*from, *to],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub kind: ObjectKind,
    pub appearance_id: u8,
    pub color: Option<[u8; 3]>,
    pub action: ObjectAction,
    pub path: ObjectPath,
    pub spawn: WaypointId,
}

impl ObjectSpec {
    pub fn appearance(&self) -> &'static Appearance {
        Appearance::get(self.appearance_id).expect("appearance id in table")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuddleSpec {
    pub center: WaypointId,
    pub radius: f64,
    pub friction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoMission {
    pub start: WaypointId,
    /// Waypoints from `start` to the end of the chosen seed path.
    pub path: Vec<WaypointId>,
    /// Index of the seed path this mission follows.
    pub seed_path: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Continuous { min: f64, max: f64, step: f64 },
    /// Ordered choice set `0..choices`, value is the position.
    Discrete { choices: usize },
}

impl Domain {
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Domain::Continuous { min, max, .. } => v >= min && v <= max,
            Domain::Discrete { choices } => v >= 0.0 && v < choices as f64 && v.fract() == 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub domain: Domain,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcreteScenario {
    pub schema_version: u32,
    pub seed_id: u32,
    pub map: String,
    pub mission: EgoMission,
    pub objects: Vec<ObjectSpec>,
    pub puddles: Vec<PuddleSpec>,
    pub weather: WeatherParams,
    pub attributes: Vec<Attribute>,
}

fn is_subpath(needle: &[WaypointId], hay: &[WaypointId]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

impl ConcreteScenario {
    /// Ego-only scenario driving the whole of seed path `path`, in default weather.
    pub fn empty(seed: &ScenarioSeed, path: usize) -> Option<ConcreteScenario> {
        let p = seed.paths.get(path)?;
        Some(ConcreteScenario {
            schema_version: SCENARIO_SCHEMA_VERSION,
            seed_id: seed.id,
            map: seed.map.clone(),
            mission: EgoMission {
                start: p.waypoints[0],
                path: p.waypoints.clone(),
                seed_path: path,
                direction: p.direction,
            },
            objects: Vec::new(),
            puddles: Vec::new(),
            weather: WeatherParams::default(),
            attributes: Vec::new(),
        })
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Json(e.to_string()))
    }

    /// Content hash (hex SHA-256 of the compact JSON form).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Attribute vector as CSV (`name,kind,min,max,step_or_choices,value`).
    pub fn attributes_csv(&self) -> String {
        let mut out = String::from("name,kind,min,max,step,value\n");
        for a in &self.attributes {
            let line = match a.domain {
                Domain::Continuous { min, max, step } => {
                    format!("{},continuous,{min},{max},{step},{}\n", a.name, a.value)
                }
                Domain::Discrete { choices } => {
                    format!("{},discrete,0,{},1,{}\n", a.name, choices - 1, a.value)
                }
            };
            out.push_str(&line);
        }
        out
    }

    /// Check placement and path validity against the seed the scenario was derived from.
    pub fn validate(&self, seed: &ScenarioSeed) -> Result<(), ScenarioError> {
        if self.seed_id != seed.id {
            return Err(ScenarioError::WrongSeed {
                expected: seed.id,
                found: self.seed_id,
            });
        }
        let in_seed = |id: WaypointId| {
            if seed.contains(id) {
                Ok(())
            } else {
                Err(ScenarioError::ForeignWaypoint(id))
            }
        };
        let on_seed_path = |p: &[WaypointId], what: &str| {
            if seed.paths.iter().any(|sp| is_subpath(p, &sp.waypoints)) {
                Ok(())
            } else {
                Err(ScenarioError::ForeignPath(what.to_string()))
            }
        };
        let m = &self.mission;
        in_seed(m.start)?;
        if m.path.first() != Some(&m.start) || m.path.len() < 2 {
            return Err(ScenarioError::ForeignPath("ego mission".into()));
        }
        match seed.paths.get(m.seed_path) {
            Some(sp) if sp.waypoints.ends_with(&m.path) => {}
            _ => return Err(ScenarioError::ForeignPath("ego mission".into())),
        }
        let mut spawns = BTreeSet::from([m.start]);
        for (i, o) in self.objects.iter().enumerate() {
            in_seed(o.spawn)?;
            if !spawns.insert(o.spawn) {
                return Err(ScenarioError::SharedSpawn(o.spawn));
            }
            let what = format!("object {i}");
            match &o.path {
                ObjectPath::Waypoints(w) => {
                    if w.first() != Some(&o.spawn) {
                        return Err(ScenarioError::ForeignPath(what));
                    }
                    // a single waypoint is a standing position, not a route
                    if w.len() > 1 {
                        on_seed_path(w, &what)?;
                    }
                }
                ObjectPath::Crossing { from, to } => {
                    if *from != o.spawn || o.kind != ObjectKind::Pedestrian {
                        return Err(ScenarioError::ForeignPath(what));
                    }
                    in_seed(*to)?;
                }
            }
            let app = Appearance::get(o.appearance_id)
                .ok_or_else(|| ScenarioError::OutOfRange {
                    name: format!("object.{i}.appearance"),
                    value: o.appearance_id as f64,
                })?;
            if app.kind != o.kind {
                return Err(ScenarioError::OutOfRange {
                    name: format!("object.{i}.appearance"),
                    value: o.appearance_id as f64,
                });
            }
            let speed_range = match o.kind {
                ObjectKind::Pedestrian => (1.0, 4.0),
                ObjectKind::Vehicle => (3.0, 10.0),
            };
            let check_speed = |s: f64| {
                if s < speed_range.0 || s > speed_range.1 {
                    Err(ScenarioError::OutOfRange {
                        name: format!("object.{i}.speed"),
                        value: s,
                    })
                } else {
                    Ok(())
                }
            };
            match &o.action {
                ObjectAction::Linear { speed } => check_speed(*speed)?,
                ObjectAction::Maneuver { segments } => {
                    for s in segments {
                        check_speed(s.speed)?;
                    }
                }
                _ => {}
            }
        }
        for (i, p) in self.puddles.iter().enumerate() {
            in_seed(p.center)?;
            if !(0.5..=3.0).contains(&p.radius) || !(0.1..=1.0).contains(&p.friction) {
                return Err(ScenarioError::OutOfRange {
                    name: format!("puddle.{i}"),
                    value: p.radius,
                });
            }
        }
        if !self.weather.is_valid() {
            return Err(ScenarioError::OutOfRange {
                name: "weather".into(),
                value: f64::NAN,
            });
        }
        for a in &self.attributes {
            if !a.domain.contains(a.value) {
                return Err(ScenarioError::OutOfRange {
                    name: a.name.clone(),
                    value: a.value,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appearance_table_layout() {
        assert_eq!(APPEARANCES.len(), 26);
        for (i, a) in APPEARANCES.iter().enumerate() {
            assert_eq!(a.id as usize, i);
            let want = if i < 13 { ObjectKind::Vehicle } else { ObjectKind::Pedestrian };
            assert_eq!(a.kind, want);
        }
        assert_eq!(Appearance::for_kind(ObjectKind::Pedestrian, 9).height, 0.9);
        assert_eq!(Appearance::get(25).unwrap().height, 0.4);
    }

    #[test]
    fn red_detection() {
        assert!(is_reddish(COLORS[0]));
        assert!(COLORS[1..].iter().all(|&c| !is_reddish(c)));
    }

    #[test]
    fn weather_round_trip() {
        let w = WeatherParams::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(WeatherParams::from_array(w.to_array()), w);
        assert!(w.is_valid());
        assert!(!WeatherParams { fog: 101.0, ..w }.is_valid());
    }
}
