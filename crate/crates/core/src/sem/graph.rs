//! Scenario graphs and batch preprocessing.

use super::SemError;
use crate::corpus::{label_direction, Direction, ScenarioSeed};
use crate::geometry::{angle_diff, Point3};
use crate::map::{SignalKind, WaypointId};
use crate::scenario::{ConcreteScenario, ObjectKind, ObjectPath};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Default,
    TrafficLight,
    EgoStart,
    EgoEnd,
    Vehicle,
    Pedestrian,
}

impl NodeType {
    pub const COUNT: usize = 6;

    pub fn code(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeType {
    Default,
    EgoMission,
    VehiclePath,
    PedestrianPath,
}

impl EdgeType {
    pub const COUNT: usize = 4;

    pub fn code(self) -> usize {
        self as usize
    }
}

/// Sign codes 0 (none) through 4, see [`SignalKind::sign_code`].
pub const SIGN_CODES: usize = 5;
/// Appearance codes: 0 is none, `appearance_id + 1` otherwise.
pub const APPEARANCE_CODES: usize = 27;
pub const DIRECTION_CODES: usize = 4;
/// Distance, one-hot edge type, one-hot direction.
pub const EDGE_FEATURES: usize = 1 + EdgeType::COUNT + DIRECTION_CODES;
pub const WEATHER_FEATURES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    /// Waypoint id, or `None` for a traffic light node.
    pub waypoint: Option<WaypointId>,
    pub rel_pos: [f64; 3],
    pub node_type: NodeType,
    pub sign: u8,
    pub appearance: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub distance: f64,
    pub edge_type: EdgeType,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub weather: [f64; WEATHER_FEATURES],
}

impl ScenarioGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Same graph with nodes reordered: new node `i` is old node `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> ScenarioGraph {
        let mut inv = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inv[old] = new;
        }
        ScenarioGraph {
            nodes: order.iter().map(|&o| self.nodes[o].clone()).collect(),
            edges: self
                .edges
                .iter()
                .rev()
                .map(|e| GraphEdge {
                    from: inv[e.from],
                    to: inv[e.to],
                    ..e.clone()
                })
                .collect(),
            weather: self.weather,
        }
    }
}

fn object_direction(seed: &ScenarioSeed, ids: &[WaypointId]) -> Direction {
    let wps: Vec<_> = ids.iter().filter_map(|&i| seed.waypoint(i)).collect();
    let (Some(first), Some(last)) = (wps.first(), wps.last()) else {
        return Direction::Unknown;
    };
    let length: f64 = wps.windows(2).map(|w| w[0].position.dist(w[1].position)).sum();
    label_direction(angle_diff(last.heading, first.heading), length)
}

/// Convert a scenario into its graph over the seed's waypoints and traffic lights.
pub fn scenario_to_graph(sc: &ConcreteScenario, seed: &ScenarioSeed) -> Result<ScenarioGraph, SemError> {
    let bad = |why: String| Err(SemError::InconsistentSeed { seed: seed.id, why });
    if sc.seed_id != seed.id {
        return bad(format!("scenario names seed {}", sc.seed_id));
    }
    let index: BTreeMap<WaypointId, usize> = seed.waypoints.iter().enumerate().map(|(i, w)| (w.id, i)).collect();
    let lookup = |id: WaypointId| index.get(&id).copied();
    let mission = &sc.mission.path;
    let (Some(&start), Some(&end)) = (mission.first(), mission.last()) else {
        return bad("empty mission".into());
    };
    if start == end || mission.len() < 2 {
        return bad("mission has no extent".into());
    }
    for &id in mission.iter().chain(sc.objects.iter().flat_map(|o| o.path.waypoint_ids()).collect::<Vec<_>>().iter()) {
        if lookup(id).is_none() {
            return bad(format!("waypoint {id} is not in the seed"));
        }
    }
    for o in &sc.objects {
        if lookup(o.spawn).is_none() {
            return bad(format!("spawn waypoint {} is not in the seed", o.spawn));
        }
    }

    let origin = seed.waypoint(start).expect("checked").position;
    let rel = |p: Point3| [p.x - origin.x, p.y - origin.y, p.z - origin.z];
    let mut nodes: Vec<GraphNode> = seed
        .waypoints
        .iter()
        .map(|w| GraphNode {
            waypoint: Some(w.id),
            rel_pos: rel(w.position),
            node_type: NodeType::Default,
            sign: 0,
            appearance: 0,
        })
        .collect();
    for s in &seed.extras.signs {
        if let Some(i) = lookup(s.waypoint) {
            if nodes[i].sign == 0 {
                nodes[i].sign = s.kind.sign_code();
            }
        }
    }
    for o in &sc.objects {
        let n = &mut nodes[lookup(o.spawn).expect("checked")];
        if n.node_type != NodeType::Default {
            continue;
        }
        n.node_type = match o.kind {
            ObjectKind::Vehicle => NodeType::Vehicle,
            ObjectKind::Pedestrian => NodeType::Pedestrian,
        };
        n.appearance = o.appearance_id + 1;
    }
    for (id, t) in [(start, NodeType::EgoStart), (end, NodeType::EgoEnd)] {
        let n = &mut nodes[lookup(id).expect("checked")];
        if matches!(n.node_type, NodeType::Vehicle | NodeType::Pedestrian) {
            log::warn!("seed {}: waypoint {id} is both an ego endpoint and an object spawn", seed.id);
            n.appearance = 0;
        }
        n.node_type = t;
    }

    let mut edges = Vec::new();
    let mut add_path = |ids: &[WaypointId], edge_type: EdgeType, direction: Direction, nodes: &[GraphNode]| {
        let cuts: Vec<usize> = ids
            .iter()
            .enumerate()
            .filter(|&(k, &id)| {
                let n = &nodes[lookup(id).expect("checked")];
                k == 0 || k + 1 == ids.len() || n.node_type != NodeType::Default || n.sign != 0
            })
            .map(|(_, &id)| lookup(id).expect("checked"))
            .collect();
        for w in cuts.windows(2) {
            let d = dist(&nodes[w[0]].rel_pos, &nodes[w[1]].rel_pos);
            if d > 1e-9 {
                edges.push(GraphEdge {
                    from: w[0],
                    to: w[1],
                    distance: d,
                    edge_type,
                    direction,
                });
            }
        }
    };
    add_path(mission, EdgeType::EgoMission, sc.mission.direction, &nodes);
    for o in &sc.objects {
        let edge_type = match o.kind {
            ObjectKind::Vehicle => EdgeType::VehiclePath,
            ObjectKind::Pedestrian => EdgeType::PedestrianPath,
        };
        let (ids, direction) = match &o.path {
            ObjectPath::Waypoints(w) => (w.clone(), object_direction(seed, w)),
            ObjectPath::Crossing { from, to } => (vec![*from, *to], Direction::Straight),
        };
        add_path(&ids, edge_type, direction, &nodes);
    }

    for &light in &seed.traffic_lights {
        let sign = seed.extras.signs.iter().find(|s| s.signal == light);
        let pos = sign.map(|s| s.position).unwrap_or(seed.center);
        let idx = nodes.len();
        nodes.push(GraphNode {
            waypoint: None,
            rel_pos: rel(pos),
            node_type: NodeType::TrafficLight,
            sign: SignalKind::TrafficLight.sign_code(),
            appearance: 0,
        });
        if let Some(w) = sign.and_then(|s| lookup(s.waypoint)) {
            let d = dist(&nodes[idx].rel_pos, &nodes[w].rel_pos);
            if d > 1e-9 {
                edges.push(GraphEdge {
                    from: idx,
                    to: w,
                    distance: d,
                    edge_type: EdgeType::Default,
                    direction: Direction::Unknown,
                });
            }
        }
    }

    Ok(ScenarioGraph {
        nodes,
        edges,
        weather: sc.weather.to_array(),
    })
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Per-dimension statistics used to standardize a batch, kept so inference matches training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub pos_mean: [f64; 3],
    pub pos_std: [f64; 3],
    pub weather_mean: [f64; WEATHER_FEATURES],
    pub weather_std: [f64; WEATHER_FEATURES],
    pub max_distance: f64,
}

fn mean_std<const D: usize>(rows: impl Iterator<Item = [f64; D]> + Clone) -> ([f64; D], [f64; D]) {
    let n = rows.clone().count().max(1) as f64;
    let mut mean = [0.0; D];
    for r in rows.clone() {
        for d in 0..D {
            mean[d] += r[d] / n;
        }
    }
    let mut var = [0.0; D];
    for r in rows {
        for d in 0..D {
            var[d] += (r[d] - mean[d]).powi(2) / n;
        }
    }
    (mean, var.map(f64::sqrt))
}

fn standardize(x: f64, mean: f64, std: f64) -> f64 {
    if std > 1e-12 {
        (x - mean) / std
    } else {
        0.0
    }
}

impl NormStats {
    pub fn from_graphs(graphs: &[ScenarioGraph]) -> NormStats {
        let (pos_mean, pos_std) = mean_std(graphs.iter().flat_map(|g| g.nodes.iter().map(|n| n.rel_pos)));
        let (weather_mean, weather_std) = mean_std(graphs.iter().map(|g| g.weather));
        let max_distance = graphs
            .iter()
            .flat_map(|g| g.edges.iter().map(|e| e.distance))
            .fold(0.0, f64::max);
        NormStats {
            pos_mean,
            pos_std,
            weather_mean,
            weather_std,
            max_distance: if max_distance > 0.0 { max_distance } else { 1.0 },
        }
    }

    pub fn position(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|d| standardize(p[d], self.pos_mean[d], self.pos_std[d]))
    }

    pub fn weather(&self, w: [f64; WEATHER_FEATURES]) -> [f64; WEATHER_FEATURES] {
        std::array::from_fn(|d| standardize(w[d], self.weather_mean[d], self.weather_std[d]))
    }

    pub fn unnormalize_position(&self, z: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|d| z[d] * self.pos_std[d] + self.pos_mean[d])
    }

    pub fn unnormalize_weather(&self, z: [f64; WEATHER_FEATURES]) -> [f64; WEATHER_FEATURES] {
        std::array::from_fn(|d| z[d] * self.weather_std[d] + self.weather_mean[d])
    }
}

/// Several graphs flattened into one disjoint graph with normalized features.
///
/// Every stored edge is used in both directions and each node gets a self loop
/// with an all-zero feature vector. Edges are grouped by destination.
#[derive(Debug, Clone)]
pub struct Batch {
    pub graph_count: usize,
    pub node_graph: Vec<usize>,
    pub graph_sizes: Vec<usize>,
    pub positions: Array2<f64>,
    pub node_types: Vec<usize>,
    pub signs: Vec<usize>,
    pub appearances: Vec<usize>,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub edge_features: Array2<f64>,
    /// Edges into node `i` are `dst_offsets[i]..dst_offsets[i + 1]`.
    pub dst_offsets: Vec<usize>,
    pub weather: Array2<f64>,
}

impl Batch {
    pub fn node_count(&self) -> usize {
        self.node_graph.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_src.len()
    }

    pub fn new(graphs: &[ScenarioGraph], stats: &NormStats) -> Result<Batch, SemError> {
        if graphs.is_empty() {
            return Err(SemError::EmptyBatch);
        }
        let n: usize = graphs.iter().map(|g| g.nodes.len()).sum();
        let mut node_graph = Vec::with_capacity(n);
        let mut positions = Array2::zeros((n, 3));
        let (mut node_types, mut signs, mut appearances) = (Vec::new(), Vec::new(), Vec::new());
        let mut raw_edges: Vec<(usize, usize, [f64; EDGE_FEATURES])> = Vec::new();
        let mut weather = Array2::zeros((graphs.len(), WEATHER_FEATURES));
        let mut base = 0;
        for (b, g) in graphs.iter().enumerate() {
            if g.nodes.is_empty() {
                return Err(SemError::ShapeMismatch(format!("graph {b} has no nodes")));
            }
            for node in &g.nodes {
                let i = node_graph.len();
                node_graph.push(b);
                for (d, v) in stats.position(node.rel_pos).into_iter().enumerate() {
                    positions[[i, d]] = v;
                }
                if node.sign as usize >= SIGN_CODES || node.appearance as usize >= APPEARANCE_CODES {
                    return Err(SemError::ShapeMismatch(format!("graph {b} has a node code out of range")));
                }
                node_types.push(node.node_type.code());
                signs.push(node.sign as usize);
                appearances.push(node.appearance as usize);
                raw_edges.push((i, i, [0.0; EDGE_FEATURES]));
            }
            for e in &g.edges {
                if e.from >= g.nodes.len() || e.to >= g.nodes.len() {
                    return Err(SemError::ShapeMismatch(format!("graph {b} has an edge to a missing node")));
                }
                let mut f = [0.0; EDGE_FEATURES];
                f[0] = e.distance / stats.max_distance;
                f[1 + e.edge_type.code()] = 1.0;
                f[1 + EdgeType::COUNT + e.direction.index()] = 1.0;
                raw_edges.push((base + e.from, base + e.to, f));
                raw_edges.push((base + e.to, base + e.from, f));
            }
            for (d, v) in stats.weather(g.weather).into_iter().enumerate() {
                weather[[b, d]] = v;
            }
            base += g.nodes.len();
        }
        raw_edges.sort_by_key(|&(s, d, _)| (d, s));
        let mut dst_offsets = vec![0; n + 1];
        for &(_, d, _) in &raw_edges {
            dst_offsets[d + 1] += 1;
        }
        for i in 0..n {
            dst_offsets[i + 1] += dst_offsets[i];
        }
        let mut edge_features = Array2::zeros((raw_edges.len(), EDGE_FEATURES));
        for (k, (_, _, f)) in raw_edges.iter().enumerate() {
            for (c, v) in f.iter().enumerate() {
                edge_features[[k, c]] = *v;
            }
        }
        Ok(Batch {
            graph_count: graphs.len(),
            graph_sizes: graphs.iter().map(|g| g.nodes.len()).collect(),
            node_graph,
            positions,
            node_types,
            signs,
            appearances,
            edge_src: raw_edges.iter().map(|e| e.0).collect(),
            edge_dst: raw_edges.iter().map(|e| e.1).collect(),
            edge_features,
            dst_offsets,
            weather,
        })
    }
}

/// Standardize a batch with its own statistics.
pub fn preprocess_batch(graphs: &[ScenarioGraph]) -> Result<(Batch, NormStats), SemError> {
    let stats = NormStats::from_graphs(graphs);
    Ok((Batch::new(graphs, &stats)?, stats))
}

