use proptest::prelude::*;
use scenariofuzz::fixtures;
use scenariofuzz::geometry::Point3;
use scenariofuzz::map::*;

fn road_from_pieces(pieces: &[(f64, f64)]) -> RoadNetwork {
    // pieces: (length, curvature); reference line chained by integrating each piece.
    let mut geometry = Vec::new();
    let (mut s, mut x, mut y, mut h) = (0.0, 0.0, 0.0, 0.0);
    for &(len, k) in pieces {
        geometry.push(Geometry {
            s,
            x,
            y,
            hdg: h,
            length: len,
            kind: if k == 0.0 { GeometryKind::Line } else { GeometryKind::Arc { curvature: k } },
        });
        if k == 0.0 {
            x += len * h.cos();
            y += len * h.sin();
        } else {
            let h1 = h + k * len;
            x += (h1.sin() - h.sin()) / k;
            y -= (h1.cos() - h.cos()) / k;
            h = h1;
        }
        s += len;
    }
    let lane = |id: i32| Lane {
        id,
        lane_type: "driving".into(),
        width: 3.5,
        road_mark: RoadMark::Solid,
        predecessor: None,
        successor: None,
    };
    let mut net = RoadNetwork::empty("generated");
    net.roads.push(Road {
        id: 7,
        name: String::new(),
        length: s,
        junction: None,
        speed_limit: 10.0,
        geometry,
        lane_sections: vec![LaneSection {
            s: 0.0,
            center_mark: RoadMark::Solid,
            lanes: vec![lane(-1), lane(1)],
        }],
        predecessor: None,
        successor: None,
    });
    net
}

/// Length of the lane curve between two road coordinates by dense chord summation.
fn chord_length(road: &Road, t: f64, s0: f64, s1: f64) -> f64 {
    let n = 2000;
    let mut total = 0.0;
    let mut prev = road.pose_at(s0, t).0;
    for i in 1..=n {
        let s = s0 + (s1 - s0) * i as f64 / n as f64;
        let p = road.pose_at(s, t).0;
        total += p.dist(prev);
        prev = p;
    }
    total
}

fn pieces() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec(
        (5.0f64..40.0, prop_oneof![Just(0.0), -0.05f64..-0.01, 0.01f64..0.05]),
        1..4,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn edge_lengths_match_lane_arc_length(pieces in pieces(), spacing in 2.0f64..8.0) {
        let net = road_from_pieces(&pieces);
        let road = &net.roads[0];
        let g = build_topology(&net, spacing).unwrap();
        for chain in &g.lanes {
            let t = if chain.lane < 0 { -1.75 } else { 1.75 };
            for (i, pair) in chain.nodes.windows(2).enumerate() {
                let e = g.edge(pair[0], pair[1]).expect("chain edge");
                let reference = chord_length(road, t, chain.s_values[i], chain.s_values[i + 1]);
                prop_assert!((e.length - reference).abs() <= 1e-3 * reference.max(1.0),
                    "edge {} vs chord {}", e.length, reference);
                prop_assert!(e.length <= spacing + 1e-9);
            }
        }
    }

    #[test]
    fn network_json_round_trip(pieces in pieces()) {
        let net = road_from_pieces(&pieces);
        let back = RoadNetwork::from_json(&net.to_json()).unwrap();
        prop_assert_eq!(&back, &net);
        let a = build_topology(&net, 5.0).unwrap();
        let b = build_topology(&back, 5.0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn nearest_waypoint_is_minimal(x in -120.0f64..120.0, y in -120.0f64..120.0) {
        let g = build_topology(&fixtures::network("cross_small").unwrap(), 5.0).unwrap();
        let p = Point3::new(x, y, 0.0);
        let w = g.nearest_waypoint(p).unwrap();
        let d = w.position.dist(p);
        for other in &g.waypoints {
            prop_assert!(other.position.dist(p) >= d - 1e-9);
        }
    }
}

fn floyd_warshall(g: &TopologyGraph) -> Vec<Vec<f64>> {
    let n = g.len();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for e in &g.edges {
        let cur = &mut d[e.from as usize][e.to as usize];
        *cur = cur.min(e.length);
    }
    for k in 0..n {
        for i in 0..n {
            if !d[i][k].is_finite() {
                continue;
            }
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

#[test]
fn shortest_paths_match_all_pairs_oracle() {
    for name in ["tee_small", "cross_small"] {
        let g = build_topology(&fixtures::network(name).unwrap(), 5.0).unwrap();
        let d = floyd_warshall(&g);
        let n = g.len() as u32;
        for from in (0..n).step_by(7) {
            for to in (0..n).step_by(5) {
                match g.shortest_path(from, to) {
                    Ok(path) => {
                        assert_eq!(path[0], from);
                        assert_eq!(*path.last().unwrap(), to);
                        let len = g.path_length(&path).unwrap();
                        assert!((len - d[from as usize][to as usize]).abs() < 1e-9);
                    }
                    Err(MapError::NotReachable { .. }) => {
                        assert!(d[from as usize][to as usize].is_infinite())
                    }
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }
}

#[test]
fn every_fixture_parses_with_expected_structure() {
    let cross = fixtures::network("cross_small").unwrap();
    assert_eq!(cross.roads.len(), 4);
    assert_eq!(cross.junctions.len(), 1);
    assert_eq!(cross.junctions[0].connecting_roads.len(), 12);
    assert_eq!(cross.traffic_lights().count(), 4);
    let max_pair = cross
        .traffic_lights()
        .flat_map(|a| cross.traffic_lights().map(move |b| a.position.xy().dist(b.position.xy())))
        .fold(0.0, f64::max);
    assert!(max_pair < 25.0);
    let town = fixtures::network("mini_town").unwrap();
    assert_eq!(town.junctions.len(), 2);
    assert_eq!(town.roads.len(), 6);
    assert_eq!(town.traffic_lights().count(), 4);
    assert!(town.signals.iter().any(|s| s.kind == SignalKind::Stop));
    let tee = fixtures::network("tee_small").unwrap();
    assert_eq!(tee.traffic_lights().count(), 0);
    assert!(tee.signals.iter().any(|s| s.kind == SignalKind::Yield));
    let straight = fixtures::network("straight_road").unwrap();
    assert_eq!(straight.ignored_elements, 1);
    assert!((straight.roads[0].speed_limit - 50.0 / 3.6).abs() < 1e-12);
}

#[test]
fn cross_straight_route_length() {
    let net = fixtures::network("cross_small").unwrap();
    let g = build_topology(&net, 5.0).unwrap();
    // West approach lane -1 node nearest x=-37 to east exit lane -1 node nearest x=37.
    let a = g.nearest_waypoint(Point3::new(-37.0, -1.75, 0.0)).unwrap().id;
    let b = g.nearest_waypoint(Point3::new(37.0, -1.75, 0.0)).unwrap().id;
    let path = g.shortest_path(a, b).unwrap();
    assert!((g.path_length(&path).unwrap() - 74.0).abs() < 1e-9);
}
