use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenariofuzz::corpus::*;
use scenariofuzz::fixtures;
use scenariofuzz::geometry::{angle_diff, Point3};
use scenariofuzz::map::{build_topology, RoadNetwork, TopologyGraph, WaypointId};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

fn build(name: &str) -> (RoadNetwork, TopologyGraph, SeedCorpus) {
    let net = fixtures::network(name).unwrap();
    let g = build_topology(&net, 5.0).unwrap();
    let c = build_corpus(&net, &g, &CorpusParams::default()).unwrap();
    (net, g, c)
}

fn golden() -> Value {
    serde_json::from_str(include_str!("../fixtures/golden/corpus_summary.json")).unwrap()
}

#[test]
fn seeds_match_golden_summary() {
    let golden = golden();
    for name in fixtures::MAP_NAMES {
        let expected = &golden["maps"][name];
        let (_, g, c) = build(name);
        assert_eq!(g.len() as u64, expected["waypoints"].as_u64().unwrap(), "{name}");
        let seeds = expected["seeds"].as_array().unwrap();
        assert_eq!(c.seeds.len(), seeds.len(), "{name}");
        for (seed, want) in c.seeds.iter().zip(seeds) {
            assert_eq!(
                serde_json::to_value(seed.road_type).unwrap(),
                want["road_type"],
                "{name} seed {}",
                seed.id
            );
            assert_eq!(seed.traffic_lights.len() as u64, want["lights"].as_u64().unwrap());
            assert_eq!(seed.waypoints.len() as u64, want["nodes"].as_u64().unwrap(), "{name} seed {}", seed.id);
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for p in &seed.paths {
                *counts.entry(format!("{:?}", p.direction)).or_default() += 1;
            }
            let want_counts: BTreeMap<String, u64> = want["paths"]
                .as_object()
                .unwrap()
                .iter()
                .map(|(k, v)| (k.clone(), v.as_u64().unwrap()))
                .collect();
            assert_eq!(counts, want_counts, "{name} seed {}", seed.id);
        }
    }
}

#[test]
fn corpus_invariants_hold_on_every_fixture() {
    for name in fixtures::MAP_NAMES {
        let (_, g, c) = build(name);
        let mut owner = vec![None; g.len()];
        for seed in &c.seeds {
            assert_eq!(seed.map, c.map);
            assert!(!seed.waypoints.is_empty());
            for w in &seed.waypoints {
                assert!(owner[w.id as usize].is_none(), "waypoint {} in two seeds", w.id);
                owner[w.id as usize] = Some(seed.id);
            }
            let n = seed.waypoints.len() as f64;
            let mean = seed.waypoints.iter().fold(Point3::default(), |acc, w| {
                Point3::new(acc.x + w.position.x / n, acc.y + w.position.y / n, acc.z + w.position.z / n)
            });
            assert!(mean.dist(seed.center) < 1e-9);
            for p in &seed.paths {
                assert!(p.waypoints.len() >= 2);
                for pair in p.waypoints.windows(2) {
                    assert!(g.edge(pair[0], pair[1]).is_some());
                    assert!(seed.contains(pair[0]) && seed.contains(pair[1]));
                }
                let unique: BTreeSet<_> = p.waypoints.iter().collect();
                assert_eq!(unique.len(), p.waypoints.len());
            }
        }
        assert!(owner.iter().all(|o| o.is_some()), "{name}: waypoint not covered");
    }
}

/// Number of distinct paths between every (entry, exit) pair, counted by dynamic programming
/// over the (acyclic) seed region.
fn path_counts(g: &TopologyGraph, nodes: &BTreeSet<WaypointId>) -> BTreeMap<(WaypointId, WaypointId), u64> {
    let (entries, exits) = region_boundary(g, nodes);
    let mut out = BTreeMap::new();
    for &e in &entries {
        let mut memo: BTreeMap<WaypointId, BTreeMap<WaypointId, u64>> = BTreeMap::new();
        fn count(
            g: &TopologyGraph,
            nodes: &BTreeSet<WaypointId>,
            exits: &[WaypointId],
            u: WaypointId,
            memo: &mut BTreeMap<WaypointId, BTreeMap<WaypointId, u64>>,
        ) -> BTreeMap<WaypointId, u64> {
            if let Some(m) = memo.get(&u) {
                return m.clone();
            }
            let mut here = BTreeMap::new();
            for edge in g.out_edges(u) {
                if !nodes.contains(&edge.to) {
                    continue;
                }
                if exits.contains(&edge.to) {
                    *here.entry(edge.to).or_insert(0) += 1;
                }
                for (x, c) in count(g, nodes, exits, edge.to, memo) {
                    *here.entry(x).or_insert(0) += c;
                }
            }
            memo.insert(u, here.clone());
            here
        }
        for (x, c) in count(g, nodes, &exits, e, &mut memo) {
            out.insert((e, x), c);
        }
    }
    out
}

#[test]
fn enumerated_paths_match_counting_oracle() {
    for name in ["cross_small", "tee_small", "mini_town"] {
        let (_, g, c) = build(name);
        for seed in &c.seeds {
            let nodes: BTreeSet<_> = seed.waypoint_ids().collect();
            let mut got: BTreeMap<(WaypointId, WaypointId), u64> = BTreeMap::new();
            for p in &seed.paths {
                *got.entry((p.waypoints[0], *p.waypoints.last().unwrap())).or_default() += 1;
            }
            assert_eq!(got, path_counts(&g, &nodes), "{name} seed {}", seed.id);
        }
    }
}

#[test]
fn west_entry_of_cross_has_three_turns() {
    let (_, g, c) = build("cross_small");
    let seed = &c.seeds[0];
    // West approach, lane -1, drives +x towards the junction.
    let west: Vec<&SeedPath> = seed
        .paths
        .iter()
        .filter(|p| {
            let w = &g.waypoints[p.waypoints[0] as usize];
            w.position.x < -30.0 && w.position.y < 0.0
        })
        .collect();
    assert_eq!(west.len(), 3);
    let mut labels: Vec<Direction> = west.iter().map(|p| p.direction).collect();
    labels.sort();
    assert_eq!(labels, vec![Direction::Left, Direction::Right, Direction::Straight]);
    for p in west {
        let a = &g.waypoints[p.waypoints[0] as usize];
        let b = &g.waypoints[*p.waypoints.last().unwrap() as usize];
        let turn = angle_diff(b.heading, a.heading).to_degrees();
        let want = match p.direction {
            Direction::Left => 90.0,
            Direction::Right => -90.0,
            _ => 0.0,
        };
        assert!((turn - want).abs() < 1e-6);
    }
}

#[test]
fn extras_record_nearby_signs_and_lane_permissions() {
    let (net, _, c) = build("straight_road");
    let seed = &c.seeds[0];
    assert_eq!(seed.extras.signs.len(), net.signals.len());
    assert_eq!(seed.extras.lane_changes.len(), 4);
    let lane = |id: i32| seed.extras.lane_changes.iter().find(|l| l.lane == id).unwrap();
    // broken mark between -1 and -2, solid centre line and solid outer edge
    assert!(!lane(-1).inward && lane(-1).outward);
    assert!(lane(-2).inward && !lane(-2).outward);
    let (_, _, town) = build("mini_town");
    assert!(town.seeds[3].extras.signs.is_empty() || town.seeds.iter().any(|s| s
        .extras
        .signs
        .iter()
        .any(|x| x.kind == scenariofuzz::map::SignalKind::Stop)));
}

#[test]
fn corpus_build_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for name in fixtures::MAP_NAMES {
        let (net, _, a) = build(name);
        let (_, _, b) = build(name);
        assert_eq!(a.to_json(), b.to_json());
        a.save(dir.path(), &net).unwrap();
        let (loaded, loaded_net) = SeedCorpus::load(dir.path(), name).unwrap();
        assert_eq!(loaded.seeds, a.seeds);
        assert_eq!(loaded_net, net);
    }
}

#[test]
fn all_fixtures_build_quickly() {
    let start = Instant::now();
    for name in fixtures::MAP_NAMES {
        build(name);
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn unlighted_map_has_no_lighted_seeds() {
    for name in ["straight_road", "curved_road", "tee_small"] {
        let (_, _, c) = build(name);
        assert!(c.seeds.iter().all(|s| s.traffic_lights.is_empty()));
    }
}

#[test]
fn seeded_selection_is_replayable() {
    let (_, _, c) = build("mini_town");
    let pick = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20)
            .map(|_| select_seed(&c, &SeedFilter::default(), &mut rng).unwrap().id)
            .collect::<Vec<_>>()
    };
    assert_eq!(pick(11), pick(11));
    let lighted = SeedFilter {
        traffic_lights: Some(true),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        assert!(select_seed(&c, &lighted, &mut rng).unwrap().is_lighted());
    }
}
