//! Scenario-seed corpus: crawl a topology graph into junction and road-segment seeds.

use crate::geometry::{angle_diff, Point3};
use crate::map::{
    MapError, RoadId, RoadNetwork, SignalId, SignalKind, TopologyGraph, Waypoint, WaypointId,
};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no seed matches the filter")]
    NoMatch,
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("corpus io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corpus json: {0}")]
    Json(String),
    #[error("invalid corpus: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoadType {
    StraightRoad,
    CrossRoad,
    TIntersection,
}

impl RoadType {
    pub fn index(self) -> usize {
        match self {
            RoadType::StraightRoad => 0,
            RoadType::CrossRoad => 1,
            RoadType::TIntersection => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "straightroad" | "straight" => Some(RoadType::StraightRoad),
            "crossroad" | "cross" => Some(RoadType::CrossRoad),
            "tintersection" | "tee" | "t" => Some(RoadType::TIntersection),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Left,
    Right,
    Straight,
    Unknown,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::Left => 0,
            Direction::Right => 1,
            Direction::Straight => 2,
            Direction::Unknown => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPath {
    pub waypoints: Vec<WaypointId>,
    pub direction: Direction,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearbySign {
    pub signal: SignalId,
    pub kind: SignalKind,
    pub distance: f64,
    pub position: Point3,
    /// Nearest member waypoint.
    pub waypoint: WaypointId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeInfo {
    pub road: RoadId,
    pub lane: i32,
    /// Changing towards the road centre is allowed.
    pub inward: bool,
    pub outward: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedExtras {
    pub signs: Vec<NearbySign>,
    pub lane_changes: Vec<LaneChangeInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSeed {
    pub id: u32,
    pub map: String,
    /// Member waypoints sorted by id.
    pub waypoints: Vec<Waypoint>,
    pub traffic_lights: Vec<SignalId>,
    pub road_type: RoadType,
    pub paths: Vec<SeedPath>,
    pub center: Point3,
    pub extras: SeedExtras,
}

impl ScenarioSeed {
    pub fn waypoint(&self, id: WaypointId) -> Option<&Waypoint> {
        self.waypoints
            .binary_search_by_key(&id, |w| w.id)
            .ok()
            .map(|i| &self.waypoints[i])
    }

    pub fn contains(&self, id: WaypointId) -> bool {
        self.waypoint(id).is_some()
    }

    pub fn waypoint_ids(&self) -> impl Iterator<Item = WaypointId> + '_ {
        self.waypoints.iter().map(|w| w.id)
    }

    pub fn is_lighted(&self) -> bool {
        !self.traffic_lights.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusParams {
    pub spacing: f64,
    pub light_cluster_radius: f64,
    pub near_radius: f64,
    pub cluster_radius: f64,
    pub max_hops: usize,
    pub sign_radius: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            spacing: crate::map::DEFAULT_SPACING,
            light_cluster_radius: 25.0,
            near_radius: 40.0,
            cluster_radius: 30.0,
            max_hops: 60,
            sign_radius: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCorpus {
    pub schema_version: u32,
    pub map: String,
    pub params: CorpusParams,
    pub seeds: Vec<ScenarioSeed>,
    /// Wall-clock build time; not persisted so corpus files are reproducible.
    #[serde(skip)]
    pub build_duration_s: f64,
}

/// Single-linkage clusters of points, each a sorted list of indices. Clusters are ordered
/// by their lowest member index.
pub fn cluster_points(points: &[Point3], radius: f64) -> Vec<Vec<usize>> {
    assert!(radius > 0.0, "cluster radius must be positive");
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let r2 = radius * radius;
    for i in 0..n {
        for j in i + 1..n {
            if points[i].dist_sq(points[j]) <= r2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    // roots are always the lowest index of their group
    groups.into_values().collect()
}

/// Highest number of distinct road branches meeting at one member waypoint.
pub fn branch_degree(g: &TopologyGraph, nodes: &BTreeSet<WaypointId>) -> usize {
    nodes
        .iter()
        .map(|&u| {
            let mut roads = BTreeSet::new();
            roads.insert(g.waypoints[u as usize].road);
            for e in g.out_edges(u) {
                roads.insert(g.waypoints[e.to as usize].road);
            }
            for e in g.in_edges(u) {
                roads.insert(g.waypoints[e.from as usize].road);
            }
            roads.len()
        })
        .max()
        .unwrap_or(0)
}

pub fn classify_road_type(g: &TopologyGraph, nodes: &BTreeSet<WaypointId>) -> RoadType {
    match branch_degree(g, nodes) {
        d if d >= 4 => RoadType::CrossRoad,
        3 => RoadType::TIntersection,
        _ => RoadType::StraightRoad,
    }
}

pub const TURN_THRESHOLD_DEG: f64 = 20.0;
pub const STRAIGHT_MAX_LENGTH: f64 = 100.0;

pub fn label_direction(heading_change: f64, length: f64) -> Direction {
    let deg = heading_change.to_degrees();
    if deg > TURN_THRESHOLD_DEG {
        Direction::Left
    } else if deg < -TURN_THRESHOLD_DEG {
        Direction::Right
    } else if length <= STRAIGHT_MAX_LENGTH {
        Direction::Straight
    } else {
        Direction::Unknown
    }
}

/// Entry nodes have no in-edge or one from outside the region; exits mirror that for out-edges.
pub fn region_boundary(
    g: &TopologyGraph,
    nodes: &BTreeSet<WaypointId>,
) -> (Vec<WaypointId>, Vec<WaypointId>) {
    let entries = nodes
        .iter()
        .copied()
        .filter(|&u| {
            let mut ins = g.in_edges(u).peekable();
            ins.peek().is_none() || g.in_edges(u).any(|e| !nodes.contains(&e.from))
        })
        .collect();
    let exits = nodes
        .iter()
        .copied()
        .filter(|&u| {
            let mut outs = g.out_edges(u).peekable();
            outs.peek().is_none() || g.out_edges(u).any(|e| !nodes.contains(&e.to))
        })
        .collect();
    (entries, exits)
}

/// All simple paths from region entries to region exits staying inside the region, with at
/// most `max_hops` edges. Enumeration order is deterministic (entries and successors by id).
pub fn enumerate_paths(
    g: &TopologyGraph,
    nodes: &BTreeSet<WaypointId>,
    max_hops: usize,
) -> Vec<SeedPath> {
    assert!(max_hops >= 1);
    let (entries, exits) = region_boundary(g, nodes);
    let exits: BTreeSet<WaypointId> = exits.into_iter().collect();
    let mut out = Vec::new();
    let mut on_path = BTreeSet::new();
    let mut path = Vec::new();

    fn dfs(
        g: &TopologyGraph,
        nodes: &BTreeSet<WaypointId>,
        exits: &BTreeSet<WaypointId>,
        max_hops: usize,
        u: WaypointId,
        path: &mut Vec<WaypointId>,
        on_path: &mut BTreeSet<WaypointId>,
        out: &mut Vec<SeedPath>,
    ) {
        path.push(u);
        on_path.insert(u);
        if path.len() > 1 && exits.contains(&u) {
            let first = &g.waypoints[path[0] as usize];
            let last = &g.waypoints[u as usize];
            let length = g.path_length(path).unwrap();
            out.push(SeedPath {
                waypoints: path.clone(),
                direction: label_direction(angle_diff(last.heading, first.heading), length),
                length,
            });
        }
        if path.len() <= max_hops {
            for e in g.out_edges(u) {
                if nodes.contains(&e.to) && !on_path.contains(&e.to) {
                    dfs(g, nodes, exits, max_hops, e.to, path, on_path, out);
                }
            }
        }
        on_path.remove(&u);
        path.pop();
    }

    for entry in entries {
        dfs(g, nodes, &exits, max_hops, entry, &mut path, &mut on_path, &mut out);
    }
    out
}

fn mean_position(points: impl Iterator<Item = Point3>) -> Point3 {
    let (mut x, mut y, mut z, mut n) = (0.0, 0.0, 0.0, 0usize);
    for p in points {
        x += p.x;
        y += p.y;
        z += p.z;
        n += 1;
    }
    let n = n.max(1) as f64;
    Point3::new(x / n, y / n, z / n)
}

fn make_seed(
    net: &RoadNetwork,
    g: &TopologyGraph,
    params: &CorpusParams,
    id: u32,
    nodes: BTreeSet<WaypointId>,
    traffic_lights: Vec<SignalId>,
) -> ScenarioSeed {
    let waypoints: Vec<Waypoint> = nodes.iter().map(|&i| g.waypoints[i as usize].clone()).collect();
    let center = mean_position(waypoints.iter().map(|w| w.position));
    let mut signs = Vec::new();
    for s in &net.signals {
        let distance = s.position.xy().dist(center.xy());
        if distance <= params.sign_radius {
            let nearest = waypoints
                .iter()
                .min_by(|a, b| {
                    a.position
                        .dist_sq(s.position)
                        .total_cmp(&b.position.dist_sq(s.position))
                })
                .map(|w| w.id)
                .unwrap();
            signs.push(NearbySign {
                signal: s.id,
                kind: s.kind,
                distance,
                position: s.position,
                waypoint: nearest,
            });
        }
    }
    let mut lane_changes: BTreeMap<(RoadId, i32), LaneChangeInfo> = BTreeMap::new();
    for w in &waypoints {
        lane_changes.entry((w.road, w.lane)).or_insert_with(|| {
            let road = net.road(w.road).expect("waypoint road exists");
            let sec = &road.lane_sections[road.section_index(w.s.min(road.length))];
            let (inward, outward) = sec.lane_change_permissions(w.lane);
            LaneChangeInfo {
                road: w.road,
                lane: w.lane,
                inward,
                outward,
            }
        });
    }
    ScenarioSeed {
        id,
        map: net.name.clone(),
        road_type: classify_road_type(g, &nodes),
        paths: enumerate_paths(g, &nodes, params.max_hops),
        waypoints,
        traffic_lights,
        center,
        extras: SeedExtras {
            signs,
            lane_changes: lane_changes.into_values().collect(),
        },
    }
}

/// Crawl `g` into seeds: light clusters first, then location clusters of the rest.
pub fn build_corpus(
    net: &RoadNetwork,
    g: &TopologyGraph,
    params: &CorpusParams,
) -> Result<SeedCorpus, CorpusError> {
    let started = Instant::now();
    let mut assigned = vec![false; g.len()];
    let mut seeds = Vec::new();

    let lights: Vec<_> = net.traffic_lights().collect();
    let light_positions: Vec<Point3> = lights.iter().map(|l| l.position).collect();
    for cluster in cluster_points(&light_positions, params.light_cluster_radius) {
        let center = mean_position(cluster.iter().map(|&i| light_positions[i]));
        let nodes: BTreeSet<WaypointId> = g
            .waypoints
            .iter()
            .filter(|w| !assigned[w.id as usize] && w.position.xy().dist(center.xy()) <= params.near_radius)
            .map(|w| w.id)
            .collect();
        if nodes.is_empty() {
            log::warn!("traffic light cluster at ({:.1}, {:.1}) has no nearby waypoints", center.x, center.y);
            continue;
        }
        for &n in &nodes {
            assigned[n as usize] = true;
        }
        let mut ids: Vec<SignalId> = cluster.iter().map(|&i| lights[i].id).collect();
        ids.sort_unstable();
        seeds.push(make_seed(net, g, params, seeds.len() as u32, nodes, ids));
    }

    let rest: Vec<&Waypoint> = g.waypoints.iter().filter(|w| !assigned[w.id as usize]).collect();
    let positions: Vec<Point3> = rest.iter().map(|w| w.position).collect();
    for cluster in cluster_points(&positions, params.cluster_radius) {
        let nodes = cluster.iter().map(|&i| rest[i].id).collect();
        seeds.push(make_seed(net, g, params, seeds.len() as u32, nodes, Vec::new()));
    }

    let corpus = SeedCorpus {
        schema_version: CORPUS_SCHEMA_VERSION,
        map: net.name.clone(),
        params: params.clone(),
        seeds,
        build_duration_s: started.elapsed().as_secs_f64(),
    };
    log::info!(
        "built corpus for `{}`: {} seeds in {:.3} s",
        corpus.map,
        corpus.seeds.len(),
        corpus.build_duration_s
    );
    Ok(corpus)
}

/// Restricts [`select_seed`]; `None` fields are unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedFilter {
    pub map: Option<String>,
    pub road_type: Option<RoadType>,
    /// `Some(true)` keeps only seeds with traffic lights.
    pub traffic_lights: Option<bool>,
}

impl SeedFilter {
    pub fn matches(&self, seed: &ScenarioSeed) -> bool {
        self.map.as_ref().is_none_or(|m| *m == seed.map)
            && self.road_type.is_none_or(|r| r == seed.road_type)
            && self.traffic_lights.is_none_or(|t| t == seed.is_lighted())
    }
}

pub fn select_seed<'a, R: Rng + ?Sized>(
    corpus: &'a SeedCorpus,
    filter: &SeedFilter,
    rng: &mut R,
) -> Result<&'a ScenarioSeed, CorpusError> {
    let matching: Vec<&ScenarioSeed> = corpus.seeds.iter().filter(|s| filter.matches(s)).collect();
    matching.choose(rng).copied().ok_or(CorpusError::NoMatch)
}

impl SeedCorpus {
    pub fn seed(&self, id: u32) -> Option<&ScenarioSeed> {
        self.seeds.iter().find(|s| s.id == id)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.schema_version != CORPUS_SCHEMA_VERSION {
            return Err(CorpusError::Invalid(format!(
                "schema version {} (expected {CORPUS_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut ids = BTreeSet::new();
        for s in &self.seeds {
            if !ids.insert(s.id) {
                return Err(CorpusError::Invalid(format!("duplicate seed id {}", s.id)));
            }
            if s.map != self.map {
                return Err(CorpusError::Invalid(format!(
                    "seed {} belongs to map `{}`",
                    s.id, s.map
                )));
            }
            if s.waypoints.is_empty() {
                return Err(CorpusError::Invalid(format!("seed {} has no waypoints", s.id)));
            }
            if s.waypoints.windows(2).any(|w| w[0].id >= w[1].id) {
                return Err(CorpusError::Invalid(format!("seed {} waypoints unsorted", s.id)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let c: SeedCorpus = serde_json::from_str(text).map_err(|e| CorpusError::Json(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn file_name(map: &str) -> String {
        format!("{map}.json")
    }

    /// Write `<dir>/<map>.json` and the parsed network next to it.
    pub fn save(&self, dir: &Path, net: &RoadNetwork) -> Result<PathBuf, CorpusError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CorpusError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let path = dir.join(Self::file_name(&self.map));
        std::fs::write(&path, self.to_json()).map_err(io(&path))?;
        let net_path = dir.join(format!("{}.network.json", self.map));
        std::fs::write(&net_path, net.to_json()).map_err(io(&net_path))?;
        Ok(path)
    }

    /// Load a corpus and its network saved with [`SeedCorpus::save`].
    pub fn load(dir: &Path, map: &str) -> Result<(SeedCorpus, RoadNetwork), CorpusError> {
        let read = |path: PathBuf| {
            std::fs::read_to_string(&path).map_err(|source| CorpusError::Io { path, source })
        };
        let corpus = Self::from_json(&read(dir.join(Self::file_name(map)))?)?;
        let net = RoadNetwork::from_json(&read(dir.join(format!("{map}.network.json")))?)?;
        Ok((corpus, net))
    }
}
