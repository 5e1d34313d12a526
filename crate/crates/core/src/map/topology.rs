//! Directed waypoint graph sampled from a [`RoadNetwork`].
//!
//! Every drivable lane of every lane section becomes a chain of `ceil(L / spacing) + 1`
//! waypoints in driving direction (right lanes follow +s). Chains are joined through road
//! links and junction connections; when the joined endpoints coincide they are merged into a
//! single waypoint, otherwise a connecting edge spans the gap.

use super::*;
use crate::geometry::Point3;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

pub type WaypointId = u32;

/// Endpoints closer than this are treated as the same place.
const MERGE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub id: WaypointId,
    pub position: Point3,
    pub road: RoadId,
    pub lane: i32,
    /// Road coordinate on `road`.
    pub s: f64,
    /// Driving heading, in [-pi, pi).
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: WaypointId,
    pub to: WaypointId,
    pub length: f64,
}

/// Waypoints of one lane in one lane section, in driving order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneChain {
    pub road: RoadId,
    pub section: usize,
    pub lane: i32,
    pub nodes: Vec<WaypointId>,
    pub s_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyGraph {
    pub spacing: f64,
    pub waypoints: Vec<Waypoint>,
    pub edges: Vec<Edge>,
    pub lanes: Vec<LaneChain>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

impl TopologyGraph {
    fn from_parts(
        spacing: f64,
        waypoints: Vec<Waypoint>,
        edges: Vec<Edge>,
        lanes: Vec<LaneChain>,
    ) -> Self {
        let mut out_adj = vec![Vec::new(); waypoints.len()];
        let mut in_adj = vec![Vec::new(); waypoints.len()];
        for (i, e) in edges.iter().enumerate() {
            out_adj[e.from as usize].push(i);
            in_adj[e.to as usize].push(i);
        }
        for adj in out_adj.iter_mut() {
            adj.sort_by_key(|&i| edges[i].to);
        }
        for adj in in_adj.iter_mut() {
            adj.sort_by_key(|&i| edges[i].from);
        }
        TopologyGraph {
            spacing,
            waypoints,
            edges,
            lanes,
            out_adj,
            in_adj,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn waypoint(&self, id: WaypointId) -> Option<&Waypoint> {
        self.waypoints.get(id as usize)
    }

    /// Outgoing edges sorted by target id.
    pub fn out_edges(&self, id: WaypointId) -> impl Iterator<Item = &Edge> {
        self.out_adj[id as usize].iter().map(|&i| &self.edges[i])
    }

    pub fn in_edges(&self, id: WaypointId) -> impl Iterator<Item = &Edge> {
        self.in_adj[id as usize].iter().map(|&i| &self.edges[i])
    }

    pub fn edge(&self, from: WaypointId, to: WaypointId) -> Option<&Edge> {
        self.out_edges(from).find(|e| e.to == to)
    }

    /// Closest waypoint by Euclidean distance; ties (within 1e-9 m) go to the lowest id.
    pub fn nearest_waypoint(&self, pos: Point3) -> Result<&Waypoint, MapError> {
        let mut best: Option<(&Waypoint, f64)> = None;
        for w in &self.waypoints {
            let d = w.position.dist(pos);
            match best {
                Some((_, bd)) if d >= bd - 1e-9 => {}
                _ => best = Some((w, d)),
            }
        }
        best.map(|(w, _)| w).ok_or(MapError::EmptyGraph)
    }

    /// Minimum arc-length route. Equal-cost ties resolve towards lower node ids.
    pub fn shortest_path(
        &self,
        from: WaypointId,
        to: WaypointId,
    ) -> Result<Vec<WaypointId>, MapError> {
        let n = self.waypoints.len();
        for id in [from, to] {
            if id as usize >= n {
                return Err(MapError::UnknownWaypoint(id));
            }
        }
        #[derive(PartialEq)]
        struct Item(f64, WaypointId);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> Ordering {
                // min-heap on (cost, id)
                o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
            }
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut prev: Vec<Option<WaypointId>> = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[from as usize] = 0.0;
        heap.push(Item(0.0, from));
        while let Some(Item(d, u)) = heap.pop() {
            if done[u as usize] {
                continue;
            }
            done[u as usize] = true;
            if u == to {
                break;
            }
            for e in self.out_edges(u) {
                let nd = d + e.length;
                let v = e.to as usize;
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = Some(u);
                    heap.push(Item(nd, e.to));
                }
            }
        }
        if !dist[to as usize].is_finite() {
            return Err(MapError::NotReachable { from, to });
        }
        let mut path = vec![to];
        let mut cur = to;
        while let Some(p) = prev[cur as usize] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Total arc length of consecutive edges; `None` if some pair is not an edge.
    pub fn path_length(&self, path: &[WaypointId]) -> Option<f64> {
        path.windows(2)
            .map(|w| self.edge(w[0], w[1]).map(|e| e.length))
            .sum()
    }
}

struct ChainSample {
    road: RoadId,
    section: usize,
    lane: i32,
    offset: f64,
    s_values: Vec<f64>,
}

fn lane_length(road: &Road, s0: f64, s1: f64, offset: f64) -> f64 {
    road.offset_arc_length(s0, s1, offset)
}

/// Sample every drivable lane at `spacing` metres and join the lane chains.
pub fn build_topology(net: &RoadNetwork, spacing: f64) -> Result<TopologyGraph, MapError> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(MapError::InvalidValue(format!("spacing {spacing} must be > 0")));
    }
    let mut chains: Vec<ChainSample> = Vec::new();
    for road in net.all_roads() {
        for (k, sec) in road.lane_sections.iter().enumerate() {
            let (s0, s1) = road.section_range(k);
            if s1 - s0 <= 0.0 {
                continue;
            }
            for lane in sec.lanes.iter().filter(|l| l.is_driving()) {
                let offset = sec.lane_center_offset(lane.id).unwrap();
                let len = lane_length(road, s0, s1, offset);
                let count = (len / spacing - 1e-9).ceil().max(1.0) as usize + 1;
                let step = len / (count - 1) as f64;
                let mut s_values: Vec<f64> = (0..count)
                    .map(|i| match i {
                        0 => s0,
                        _ if i + 1 == count => s1,
                        _ => road.s_after_offset_length(s0, step * i as f64, offset, s1),
                    })
                    .collect();
                if lane.id > 0 {
                    s_values.reverse();
                }
                chains.push(ChainSample {
                    road: road.id,
                    section: k,
                    lane: lane.id,
                    offset,
                    s_values,
                });
            }
        }
    }

    let chain_index: BTreeMap<(RoadId, usize, i32), usize> = chains
        .iter()
        .enumerate()
        .map(|(i, c)| ((c.road, c.section, c.lane), i))
        .collect();

    // Links between chain exits and chain entries.
    let mut links: Vec<(usize, usize)> = Vec::new();
    for (ci, c) in chains.iter().enumerate() {
        let road = net.road(c.road).unwrap();
        let sec = &road.lane_sections[c.section];
        let lane = sec.lane(c.lane).unwrap();
        let forward = c.lane < 0;
        let last_section = c.section + 1 == road.lane_sections.len();
        let inner_boundary = if forward { last_section } else { c.section == 0 };
        if !inner_boundary {
            let next_sec = if forward { c.section + 1 } else { c.section - 1 };
            let target = if forward { lane.successor } else { lane.predecessor }.unwrap_or(c.lane);
            if let Some(&t) = chain_index.get(&(c.road, next_sec, target)) {
                links.push((ci, t));
            }
            continue;
        }
        let link = if forward { road.successor } else { road.predecessor };
        let Some(link) = link else { continue };
        let lane_link = if forward { lane.successor } else { lane.predecessor };
        match link.element {
            LinkElement::Road(tid) => {
                let target_road = net.road(tid).unwrap();
                let cp = link.contact_point.unwrap_or(ContactPoint::Start);
                let same_sense =
                    (forward && cp == ContactPoint::Start) || (!forward && cp == ContactPoint::End);
                let target_lane = lane_link.unwrap_or(if same_sense { c.lane } else { -c.lane });
                if let Some(t) = entry_chain(&chain_index, target_road, cp, target_lane) {
                    links.push((ci, t));
                }
            }
            LinkElement::Junction(jid) => {
                let j = net.junction(jid).unwrap();
                for conn in j.connections.iter().filter(|cn| cn.incoming_road == c.road) {
                    let target_road = net.road(conn.connecting_road).unwrap();
                    for &(from, to) in &conn.lane_links {
                        if from != c.lane {
                            continue;
                        }
                        if let Some(t) = entry_chain(&chain_index, target_road, conn.contact_point, to) {
                            links.push((ci, t));
                        }
                    }
                }
            }
        }
    }

    // Union coincident linked endpoints. Slot = (chain, first|last).
    let slot = |chain: usize, last: bool| chain * 2 + last as usize;
    let mut parent: Vec<usize> = (0..chains.len() * 2).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let endpoint = |chain: &ChainSample, last: bool| -> Vec2 {
        let road = net.road(chain.road).unwrap();
        let s = if last {
            *chain.s_values.last().unwrap()
        } else {
            chain.s_values[0]
        };
        road.pose_at(s, chain.offset).0
    };
    let mut gap_links = Vec::new();
    for &(a, b) in &links {
        let pa = endpoint(&chains[a], true);
        let pb = endpoint(&chains[b], false);
        if pa.dist(pb) <= MERGE_TOLERANCE {
            let ra = find(&mut parent, slot(a, true));
            let rb = find(&mut parent, slot(b, false));
            if ra != rb {
                let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                parent[hi] = lo;
            }
        } else {
            gap_links.push((a, b, pa.dist(pb)));
        }
    }

    let mut waypoints: Vec<Waypoint> = Vec::new();
    let mut slot_node: BTreeMap<usize, WaypointId> = BTreeMap::new();
    let mut lane_chains = Vec::with_capacity(chains.len());
    let mut edges: BTreeMap<(WaypointId, WaypointId), f64> = BTreeMap::new();
    for (ci, c) in chains.iter().enumerate() {
        let road = net.road(c.road).unwrap();
        let n = c.s_values.len();
        let mut nodes = Vec::with_capacity(n);
        for (i, &s) in c.s_values.iter().enumerate() {
            let endpoint_slot = if i == 0 {
                Some(find(&mut parent, slot(ci, false)))
            } else if i + 1 == n {
                Some(find(&mut parent, slot(ci, true)))
            } else {
                None
            };
            if let Some(sl) = endpoint_slot {
                if let Some(&id) = slot_node.get(&sl) {
                    nodes.push(id);
                    continue;
                }
            }
            let (p, _) = road.pose_at(s, c.offset);
            let id = waypoints.len() as WaypointId;
            waypoints.push(Waypoint {
                id,
                position: Point3::new(p.x, p.y, 0.0),
                road: c.road,
                lane: c.lane,
                s,
                heading: road.lane_heading(c.lane, s),
            });
            if let Some(sl) = endpoint_slot {
                slot_node.insert(sl, id);
            }
            nodes.push(id);
        }
        for i in 0..n - 1 {
            let (u, v) = (nodes[i], nodes[i + 1]);
            if u == v {
                continue;
            }
            let len = lane_length(road, c.s_values[i], c.s_values[i + 1], c.offset);
            edges
                .entry((u, v))
                .and_modify(|l| *l = l.min(len))
                .or_insert(len);
        }
        lane_chains.push(LaneChain {
            road: c.road,
            section: c.section,
            lane: c.lane,
            nodes,
            s_values: c.s_values.clone(),
        });
    }
    for (a, b, gap) in gap_links {
        let u = *lane_chains[a].nodes.last().unwrap();
        let v = lane_chains[b].nodes[0];
        if u != v {
            log::debug!("linking lane gap of {gap:.3} m between waypoints {u} and {v}");
            edges.entry((u, v)).or_insert(gap);
        }
    }

    let edges = edges
        .into_iter()
        .map(|((from, to), length)| Edge { from, to, length })
        .collect();
    Ok(TopologyGraph::from_parts(spacing, waypoints, edges, lane_chains))
}

/// Chain that enters `road` at contact point `cp` on lane `lane`.
fn entry_chain(
    index: &BTreeMap<(RoadId, usize, i32), usize>,
    road: &Road,
    cp: ContactPoint,
    lane: i32,
) -> Option<usize> {
    let (section, expected_forward) = match cp {
        ContactPoint::Start => (0, true),
        ContactPoint::End => (road.lane_sections.len() - 1, false),
    };
    if (lane < 0) != expected_forward {
        log::warn!(
            "road {} lane {lane} cannot be entered at its {cp:?}; link skipped",
            road.id
        );
        return None;
    }
    index.get(&(road.id, section, lane)).copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn single_lane(length: f64) -> RoadNetwork {
        let mut net = RoadNetwork::empty("single");
        net.roads.push(Road {
            id: 1,
            name: String::new(),
            length,
            junction: None,
            speed_limit: 10.0,
            geometry: vec![Geometry {
                s: 0.0,
                x: 0.0,
                y: 0.0,
                hdg: 0.0,
                length,
                kind: GeometryKind::Line,
            }],
            lane_sections: vec![LaneSection {
                s: 0.0,
                center_mark: RoadMark::Solid,
                lanes: vec![Lane {
                    id: -1,
                    lane_type: "driving".into(),
                    width: 3.5,
                    road_mark: RoadMark::Solid,
                    predecessor: None,
                    successor: None,
                }],
            }],
            predecessor: None,
            successor: None,
        });
        net
    }

    #[test]
    fn one_lane_hundred_metres() {
        let g = build_topology(&single_lane(100.0), 10.0).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.edges.len(), 10);
        assert!(g.edges.iter().all(|e| (e.length - 10.0).abs() < 1e-9));
    }

    #[test]
    fn empty_network_gives_empty_graph() {
        let g = build_topology(&RoadNetwork::empty("e"), 5.0).unwrap();
        assert!(g.is_empty());
        assert_eq!(g.nearest_waypoint(Point3::default()), Err(MapError::EmptyGraph));
    }

    #[test]
    fn rejects_non_positive_spacing() {
        assert!(build_topology(&single_lane(10.0), 0.0).is_err());
    }

    #[test]
    fn nearest_exact_and_tie() {
        let g = build_topology(&single_lane(100.0), 10.0).unwrap();
        let w = &g.waypoints[4];
        assert_eq!(g.nearest_waypoint(w.position).unwrap().id, 4);
        // Midway between waypoints 3 and 4 exactly (x = 35, lane centre y = -1.75).
        let mid = Point3::new(35.0, -1.75, 0.0);
        assert_eq!(g.nearest_waypoint(mid).unwrap().id, 3);
    }

    #[test]
    fn equidistant_ids_three_and_seven() {
        let g = build_topology(&single_lane(100.0), 10.0).unwrap();
        // x = 50 is 20 m from waypoint 3 (x=30) and waypoint 7 (x=70).
        let p = Point3::new(50.0, 30.0, 0.0);
        let mut g2 = g.clone();
        g2.waypoints.retain(|w| w.id == 3 || w.id == 7);
        assert_eq!(g2.nearest_waypoint(p).unwrap().id, 3);
    }

    #[test]
    fn chain_path_and_self_path() {
        let g = build_topology(&single_lane(20.0), 10.0).unwrap();
        assert_eq!(g.shortest_path(1, 1).unwrap(), vec![1]);
        assert_eq!(g.shortest_path(0, 2).unwrap(), vec![0, 1, 2]);
        assert_eq!(
            g.shortest_path(2, 0),
            Err(MapError::NotReachable { from: 2, to: 0 })
        );
    }

    #[test]
    fn deterministic_ids() {
        let net = fixtures::network("cross_small").unwrap();
        let a = build_topology(&net, 5.0).unwrap();
        let b = build_topology(&net, 5.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cross_small_counts() {
        let net = fixtures::network("cross_small").unwrap();
        let g = build_topology(&net, 5.0).unwrap();
        // 4 approach roads x 2 lanes x 21 samples, plus 20 interior junction samples.
        assert_eq!(g.len(), 188);
        for chain in &g.lanes {
            let road = net.road(chain.road).unwrap();
            let off = road.lane_sections[chain.section].lane_center_offset(chain.lane).unwrap();
            let (s0, s1) = road.section_range(chain.section);
            let len = road.offset_arc_length(s0, s1, off);
            assert_eq!(chain.nodes.len(), (len / 5.0 - 1e-9).ceil() as usize + 1);
        }
    }

    #[test]
    fn bundled_map_sizes() {
        let expected = [
            ("straight_road", 68),
            ("curved_road", 53),
            ("cross_small", 188),
            ("tee_small", 64),
            ("mini_town", 184),
        ];
        for (name, n) in expected {
            let g = build_topology(&fixtures::network(name).unwrap(), 5.0).unwrap();
            assert_eq!(g.len(), n, "{name}");
        }
    }

    #[test]
    fn junction_boundaries_are_shared_nodes() {
        let net = fixtures::network("cross_small").unwrap();
        let g = build_topology(&net, 5.0).unwrap();
        // Every connecting-road chain starts on an approach lane's last node and ends on an
        // exit lane's first node.
        let ordinary: Vec<&LaneChain> = g.lanes.iter().filter(|c| c.road < 100).collect();
        for c in g.lanes.iter().filter(|c| c.road >= 100) {
            let first = c.nodes[0];
            let last = *c.nodes.last().unwrap();
            assert!(ordinary.iter().any(|o| *o.nodes.last().unwrap() == first));
            assert!(ordinary.iter().any(|o| o.nodes[0] == last));
        }
        assert!(g.edges.iter().all(|e| e.length > 1.0));
    }

    #[test]
    fn headings_normalized_and_positions_on_lane() {
        for name in fixtures::MAP_NAMES {
            let net = fixtures::network(name).unwrap();
            let g = build_topology(&net, 5.0).unwrap();
            for w in &g.waypoints {
                assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&w.heading));
                let road = net.road(w.road).unwrap();
                let sec = &road.lane_sections[road.section_index(w.s.min(road.length - 1e-9))];
                let off = sec.lane_center_offset(w.lane).unwrap();
                let (p, _) = road.pose_at(w.s, off);
                assert!(p.dist(w.position.xy()) < 0.1);
            }
        }
    }
}
