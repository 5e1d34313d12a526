//! Road networks: an OpenDRIVE subset, its canonical JSON form, and the waypoint graph.

mod opendrive;
mod topology;

pub use opendrive::parse_opendrive;
pub use topology::{build_topology, Edge, LaneChain, TopologyGraph, Waypoint, WaypointId};

use crate::geometry::{normalize_angle, Point3, Vec2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type RoadId = u32;
pub type JunctionId = u32;
pub type SignalId = u32;

pub const DEFAULT_SPACING: f64 = 5.0;
/// Used when a road carries no `<type><speed>` record (50 km/h).
pub const DEFAULT_SPEED_LIMIT: f64 = 50.0 / 3.6;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("malformed xml: {0}")]
    MalformedXml(String),
    #[error("road {0} has no planView geometry")]
    MissingGeometry(RoadId),
    #[error("{from} links to nonexistent {target}")]
    DanglingLink { from: String, target: String },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("topology graph is empty")]
    EmptyGraph,
    #[error("waypoint {to} is not reachable from {from}")]
    NotReachable { from: WaypointId, to: WaypointId },
    #[error("unknown waypoint {0}")]
    UnknownWaypoint(WaypointId),
    #[error("json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Line,
    Arc { curvature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub hdg: f64,
    pub length: f64,
    pub kind: GeometryKind,
}

impl Geometry {
    fn curvature(&self) -> f64 {
        match self.kind {
            GeometryKind::Line => 0.0,
            GeometryKind::Arc { curvature } => curvature,
        }
    }

    /// Pose at local distance `ds` from the segment start.
    fn pose(&self, ds: f64) -> (Vec2, f64) {
        let k = self.curvature();
        if k == 0.0 {
            let (s, c) = self.hdg.sin_cos();
            (Vec2::new(self.x + c * ds, self.y + s * ds), self.hdg)
        } else {
            let h = self.hdg + k * ds;
            let x = self.x + (h.sin() - self.hdg.sin()) / k;
            let y = self.y - (h.cos() - self.hdg.cos()) / k;
            (Vec2::new(x, y), h)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadMark {
    None,
    Solid,
    Broken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: i32,
    pub lane_type: String,
    pub width: f64,
    /// Marking on the lane's outer boundary.
    pub road_mark: RoadMark,
    pub predecessor: Option<i32>,
    pub successor: Option<i32>,
}

impl Lane {
    pub fn is_driving(&self) -> bool {
        self.lane_type == "driving"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSection {
    pub s: f64,
    pub center_mark: RoadMark,
    /// Sorted by id, center lane excluded.
    pub lanes: Vec<Lane>,
}

impl LaneSection {
    pub fn lane(&self, id: i32) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == id)
    }

    /// Lateral offset of the lane centre from the reference line (left positive).
    pub fn lane_center_offset(&self, id: i32) -> Option<f64> {
        let (inner, outer) = self.lane_offsets(id)?;
        Some(0.5 * (inner + outer))
    }

    /// Lateral offsets (inner boundary, outer boundary) of a lane.
    pub fn lane_offsets(&self, id: i32) -> Option<(f64, f64)> {
        if id == 0 {
            return None;
        }
        let lane = self.lane(id)?;
        let sign = id.signum();
        let inner: f64 = self
            .lanes
            .iter()
            .filter(|l| l.id.signum() == sign && l.id.abs() < id.abs())
            .map(|l| l.width)
            .sum();
        let s = sign as f64;
        Some((s * inner, s * (inner + lane.width)))
    }

    /// Same-direction driving neighbours reachable across a broken marking: (inward, outward).
    pub fn lane_change_permissions(&self, id: i32) -> (bool, bool) {
        let sign = id.signum();
        let inner_id = id - sign;
        let outer_id = id + sign;
        let inward = inner_id != 0
            && self.lane(inner_id).is_some_and(|l| l.is_driving() && l.road_mark == RoadMark::Broken);
        let outward = self.lane(outer_id).is_some_and(|l| l.is_driving())
            && self.lane(id).is_some_and(|l| l.road_mark == RoadMark::Broken);
        (inward, outward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactPoint {
    Start,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkElement {
    Road(RoadId),
    Junction(JunctionId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoadLink {
    pub element: LinkElement,
    pub contact_point: Option<ContactPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub id: RoadId,
    pub name: String,
    pub length: f64,
    pub junction: Option<JunctionId>,
    /// m/s
    pub speed_limit: f64,
    pub geometry: Vec<Geometry>,
    pub lane_sections: Vec<LaneSection>,
    pub predecessor: Option<RoadLink>,
    pub successor: Option<RoadLink>,
}

impl Road {
    fn geometry_index(&self, s: f64) -> usize {
        match self
            .geometry
            .iter()
            .rposition(|g| g.s <= s + 1e-12)
        {
            Some(i) => i,
            None => 0,
        }
    }

    /// Reference-line pose at road coordinate `s`.
    pub fn reference_pose(&self, s: f64) -> (Vec2, f64) {
        let g = &self.geometry[self.geometry_index(s)];
        g.pose(s - g.s)
    }

    /// Pose at (s, t), t measured to the left of the reference line.
    pub fn pose_at(&self, s: f64, t: f64) -> (Vec2, f64) {
        let (p, h) = self.reference_pose(s);
        (p + Vec2::from_angle(h).perp() * t, h)
    }

    pub fn section_index(&self, s: f64) -> usize {
        self.lane_sections
            .iter()
            .rposition(|sec| sec.s <= s + 1e-12)
            .unwrap_or(0)
    }

    /// [start, end) road coordinates of a lane section.
    pub fn section_range(&self, index: usize) -> (f64, f64) {
        let start = self.lane_sections[index].s;
        let end = self
            .lane_sections
            .get(index + 1)
            .map(|n| n.s)
            .unwrap_or(self.length);
        (start, end)
    }

    /// Length of a path running at constant lateral offset `t` between `s0` and `s1`.
    pub fn offset_arc_length(&self, s0: f64, s1: f64, t: f64) -> f64 {
        let (a, b) = if s0 <= s1 { (s0, s1) } else { (s1, s0) };
        let mut total = 0.0;
        for (i, g) in self.geometry.iter().enumerate() {
            let g_start = if i == 0 { f64::NEG_INFINITY } else { g.s };
            let g_end = self
                .geometry
                .get(i + 1)
                .map(|n| n.s)
                .unwrap_or(f64::INFINITY);
            let lo = a.max(g_start);
            let hi = b.min(g_end);
            if hi > lo {
                total += (hi - lo) * (1.0 - g.curvature() * t);
            }
        }
        total
    }

    /// Road coordinate reached after travelling `dist` metres along offset `t` from `s0`
    /// towards increasing s. Clamped to `s_max`.
    pub fn s_after_offset_length(&self, s0: f64, dist: f64, t: f64, s_max: f64) -> f64 {
        let mut s = s0;
        let mut left = dist;
        for (i, g) in self.geometry.iter().enumerate() {
            let g_end = self
                .geometry
                .get(i + 1)
                .map(|n| n.s)
                .unwrap_or(f64::INFINITY)
                .min(s_max);
            if g_end <= s {
                continue;
            }
            let scale = 1.0 - g.curvature() * t;
            let piece = (g_end - s) * scale;
            if piece >= left {
                return s + left / scale;
            }
            left -= piece;
            s = g_end;
        }
        s_max
    }

    /// Driving heading of a lane at `s` (right lanes follow +s).
    pub fn lane_heading(&self, lane: i32, s: f64) -> f64 {
        let (_, h) = self.reference_pose(s);
        if lane > 0 {
            normalize_angle(h + std::f64::consts::PI)
        } else {
            normalize_angle(h)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub id: u32,
    pub incoming_road: RoadId,
    pub connecting_road: RoadId,
    pub contact_point: ContactPoint,
    /// (incoming lane, connecting lane)
    pub lane_links: Vec<(i32, i32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub id: JunctionId,
    pub name: String,
    pub connections: Vec<Connection>,
    pub connecting_roads: Vec<Road>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignalKind {
    TrafficLight,
    SpeedLimit,
    Stop,
    Yield,
}

impl SignalKind {
    pub fn from_type(kind: &str) -> Option<Self> {
        match kind {
            "trafficLight" | "1000001" => Some(SignalKind::TrafficLight),
            "speedLimit" | "274" => Some(SignalKind::SpeedLimit),
            "stop" | "206" => Some(SignalKind::Stop),
            "yield" | "205" => Some(SignalKind::Yield),
            _ => None,
        }
    }

    /// Sign code used as a graph feature; 0 is reserved for "no sign".
    pub fn sign_code(self) -> u8 {
        match self {
            SignalKind::TrafficLight => 1,
            SignalKind::SpeedLimit => 2,
            SignalKind::Stop => 3,
            SignalKind::Yield => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Applies to traffic driving +s.
    Forward,
    /// Applies to traffic driving -s.
    Backward,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub id: SignalId,
    pub kind: SignalKind,
    pub road: RoadId,
    pub s: f64,
    pub t: f64,
    pub orientation: Orientation,
    pub position: Point3,
    pub value: Option<f64>,
}

impl Signal {
    /// Whether this signal governs traffic in `lane` of its road.
    pub fn applies_to_lane(&self, lane: i32) -> bool {
        match self.orientation {
            Orientation::Both => true,
            Orientation::Forward => lane < 0,
            Orientation::Backward => lane > 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub schema_version: u32,
    pub name: String,
    pub roads: Vec<Road>,
    pub junctions: Vec<Junction>,
    pub signals: Vec<Signal>,
    /// Elements outside the supported subset that were skipped while parsing.
    pub ignored_elements: usize,
}

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

impl RoadNetwork {
    pub fn empty(name: &str) -> Self {
        RoadNetwork {
            schema_version: NETWORK_SCHEMA_VERSION,
            name: name.to_string(),
            roads: Vec::new(),
            junctions: Vec::new(),
            signals: Vec::new(),
            ignored_elements: 0,
        }
    }

    /// Ordinary roads followed by junction connecting roads.
    pub fn all_roads(&self) -> impl Iterator<Item = &Road> {
        self.roads
            .iter()
            .chain(self.junctions.iter().flat_map(|j| j.connecting_roads.iter()))
    }

    pub fn road(&self, id: RoadId) -> Option<&Road> {
        self.all_roads().find(|r| r.id == id)
    }

    pub fn junction(&self, id: JunctionId) -> Option<&Junction> {
        self.junctions.iter().find(|j| j.id == id)
    }

    pub fn traffic_lights(&self) -> impl Iterator<Item = &Signal> {
        self.signals
            .iter()
            .filter(|s| s.kind == SignalKind::TrafficLight)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("road network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let net: RoadNetwork =
            serde_json::from_str(text).map_err(|e| MapError::Json(e.to_string()))?;
        net.validate()?;
        Ok(net)
    }

    /// Check every structural invariant of the network.
    pub fn validate(&self) -> Result<(), MapError> {
        let mut seen = std::collections::BTreeSet::new();
        for road in self.all_roads() {
            if !seen.insert(road.id) {
                return Err(MapError::InvalidValue(format!("duplicate road id {}", road.id)));
            }
        }
        for road in self.all_roads() {
            if !(road.length > 0.0) {
                return Err(MapError::InvalidValue(format!(
                    "road {} has non-positive length",
                    road.id
                )));
            }
            if road.geometry.is_empty() {
                return Err(MapError::MissingGeometry(road.id));
            }
            if road.lane_sections.is_empty() {
                return Err(MapError::InvalidValue(format!("road {} has no lanes", road.id)));
            }
            for sec in &road.lane_sections {
                for lane in &sec.lanes {
                    if !(lane.width > 0.0) {
                        return Err(MapError::InvalidValue(format!(
                            "road {} lane {} has non-positive width",
                            road.id, lane.id
                        )));
                    }
                    let (_, outer) = sec.lane_offsets(lane.id).unwrap();
                    for g in &road.geometry {
                        if 1.0 - g.curvature() * outer <= 0.0 {
                            return Err(MapError::InvalidValue(format!(
                                "road {} lane {} is wider than its arc radius",
                                road.id, lane.id
                            )));
                        }
                    }
                }
            }
            for (link, side) in [(road.predecessor, "predecessor"), (road.successor, "successor")] {
                let Some(link) = link else { continue };
                let ok = match link.element {
                    LinkElement::Road(id) => seen.contains(&id),
                    LinkElement::Junction(id) => self.junction(id).is_some(),
                };
                if !ok {
                    return Err(MapError::DanglingLink {
                        from: format!("road {} {side}", road.id),
                        target: match link.element {
                            LinkElement::Road(id) => format!("road {id}"),
                            LinkElement::Junction(id) => format!("junction {id}"),
                        },
                    });
                }
            }
        }
        for j in &self.junctions {
            for c in &j.connections {
                if !seen.contains(&c.incoming_road) {
                    return Err(MapError::DanglingLink {
                        from: format!("junction {} connection {}", j.id, c.id),
                        target: format!("road {}", c.incoming_road),
                    });
                }
                if !j.connecting_roads.iter().any(|r| r.id == c.connecting_road) {
                    return Err(MapError::DanglingLink {
                        from: format!("junction {} connection {}", j.id, c.id),
                        target: format!("road {}", c.connecting_road),
                    });
                }
            }
        }
        for s in &self.signals {
            if !seen.contains(&s.road) {
                return Err(MapError::DanglingLink {
                    from: format!("signal {}", s.id),
                    target: format!("road {}", s.road),
                });
            }
        }
        Ok(())
    }
}
