//! Mission, puddle, object and weather mutators with Random and Neighbor sampling.

use crate::corpus::{Direction, ScenarioSeed};
use crate::geometry::{angle_diff, cumulative_length, point_at_length, Obb, Vec2};
use crate::map::{Waypoint, WaypointId};
use crate::scenario::*;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Neighbor moves stay within this many steps (or choice positions) of the reference.
pub const NEIGHBOR_STEPS: i64 = 5;
pub const MANEUVER_SEGMENT_LENGTH: f64 = 8.0;
pub const MANEUVER_TURN_THRESHOLD_DEG: f64 = 5.0;
pub const MANEUVER_PERTURBATION_DEG: f64 = 20.0;
pub const VEHICLE_SPEED: (f64, f64) = (3.0, 10.0);
pub const PEDESTRIAN_SPEED: (f64, f64) = (1.0, 4.0);
pub const SPEED_STEP: f64 = 0.1;
pub const EGO_LENGTH: f64 = 4.5;
pub const EGO_WIDTH: f64 = 1.8;
/// Shortest ego mission accepted when a longer one is available.
pub const MIN_MISSION_LENGTH: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MutationError {
    #[error("seed {0} has no paths")]
    SeedHasNoPaths(u32),
    #[error("seed {seed} has no {direction:?} path")]
    NoPathForDirection { seed: u32, direction: Direction },
    #[error("neighbor mutation needs a reference scenario")]
    MissingReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Random,
    Neighbor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleMode {
    Random,
    Neighbor { current: f64 },
}

/// Draw one attribute value. Continuous Random draws are uniform over the whole range;
/// Neighbor draws pick uniformly among the grid points `current + k*step`, |k| <= 5,
/// that fall inside the range.
pub fn sample_attribute<R: Rng + ?Sized>(domain: &Domain, mode: SampleMode, rng: &mut R) -> f64 {
    match (*domain, mode) {
        (Domain::Continuous { min, max, .. }, SampleMode::Random) => {
            if max > min {
                rng.random_range(min..=max)
            } else {
                min
            }
        }
        (Domain::Discrete { choices }, SampleMode::Random) => rng.random_range(0..choices.max(1)) as f64,
        (Domain::Continuous { min, max, step }, SampleMode::Neighbor { current }) => {
            let tol = 1e-9 * step.max(1.0);
            let options: Vec<f64> = (-NEIGHBOR_STEPS..=NEIGHBOR_STEPS)
                .map(|k| current + k as f64 * step)
                .filter(|v| *v >= min - tol && *v <= max + tol)
                .collect();
            if options.is_empty() {
                return current.clamp(min, max);
            }
            options[rng.random_range(0..options.len())].clamp(min, max)
        }
        (Domain::Discrete { choices }, SampleMode::Neighbor { current }) => {
            let cur = current.round() as i64;
            let lo = (cur - NEIGHBOR_STEPS).max(0);
            let hi = (cur + NEIGHBOR_STEPS).min(choices as i64 - 1);
            if lo > hi {
                return rng.random_range(0..choices.max(1)) as f64;
            }
            rng.random_range(lo..=hi) as f64
        }
    }
}

/// Records every drawn attribute; Neighbor mode looks values up by name in the reference.
struct Sampler<'a, R: Rng + ?Sized> {
    rng: &'a mut R,
    reference: Option<BTreeMap<&'a str, &'a Attribute>>,
    drawn: Vec<Attribute>,
}

impl<'a, R: Rng + ?Sized> Sampler<'a, R> {
    fn draw(&mut self, name: String, domain: Domain) -> f64 {
        let mode = match self.reference.as_ref().and_then(|r| r.get(name.as_str())) {
            Some(a) if a.domain == domain => SampleMode::Neighbor { current: a.value },
            _ => SampleMode::Random,
        };
        let value = sample_attribute(&domain, mode, self.rng);
        self.drawn.push(Attribute { name, domain, value });
        value
    }

    fn choose(&mut self, name: String, choices: usize) -> usize {
        self.draw(name, Domain::Discrete { choices }) as usize
    }

    fn range(&mut self, name: String, (min, max): (f64, f64), step: f64) -> f64 {
        self.draw(name, Domain::Continuous { min, max, step })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationParams {
    pub max_objects: usize,
    pub max_puddles: usize,
    /// Restrict the ego mission to paths with this label.
    pub direction: Option<Direction>,
    pub puddle_radius: (f64, f64),
    pub friction: (f64, f64),
}

impl Default for MutationParams {
    fn default() -> Self {
        MutationParams {
            max_objects: 8,
            max_puddles: 5,
            direction: None,
            puddle_radius: (0.5, 3.0),
            friction: (0.1, 1.0),
        }
    }
}

fn classify_turn(deg: f64) -> TurnClass {
    if deg > MANEUVER_TURN_THRESHOLD_DEG {
        TurnClass::Left
    } else if deg < -MANEUVER_TURN_THRESHOLD_DEG {
        TurnClass::Right
    } else {
        TurnClass::Straight
    }
}

/// Split a polyline into `max(1, floor(L / 8))` equal pieces: `(length, heading change deg)`.
pub fn segment_path(points: &[Vec2]) -> Vec<(f64, f64)> {
    let cum = cumulative_length(points);
    let total = cum.last().copied().unwrap_or(0.0);
    let n = ((total / MANEUVER_SEGMENT_LENGTH).floor() as usize).max(1);
    let len = total / n as f64;
    (0..n)
        .map(|i| {
            let (_, h0) = point_at_length(points, &cum, i as f64 * len);
            let (_, h1) = point_at_length(points, &cum, (i + 1) as f64 * len);
            (len, angle_diff(h1, h0).to_degrees())
        })
        .collect()
}

/// Maneuver plan for `points` with independent random turn and speed perturbations.
pub fn segment_maneuver_path<R: Rng + ?Sized>(points: &[Vec2], rng: &mut R) -> Vec<ManeuverSegment> {
    segment_path(points)
        .into_iter()
        .map(|(length, base)| ManeuverSegment {
            length,
            class: classify_turn(base),
            base_turn_deg: base,
            turn_deg: base + rng.random_range(-MANEUVER_PERTURBATION_DEG..=MANEUVER_PERTURBATION_DEG),
            speed: rng.random_range(VEHICLE_SPEED.0..=VEHICLE_SPEED.1),
        })
        .collect()
}

fn footprint(w: &Waypoint, length: f64, width: f64) -> Obb {
    Obb::new(w.position.xy(), w.heading, length, width)
}

fn path_remaining(seed: &ScenarioSeed, path: &[WaypointId], from: usize) -> f64 {
    path[from..]
        .windows(2)
        .map(|p| {
            let a = seed.waypoint(p[0]).unwrap().position;
            let b = seed.waypoint(p[1]).unwrap().position;
            a.dist(b)
        })
        .sum()
}

/// Waypoints across the road from `spawn`, reachable by a roughly perpendicular walk.
pub fn crossing_targets(seed: &ScenarioSeed, spawn: &Waypoint) -> Vec<WaypointId> {
    let fwd = Vec2::from_angle(spawn.heading);
    seed.waypoints
        .iter()
        .filter(|w| {
            let d = w.position.xy() - spawn.position.xy();
            let dist = d.norm();
            angle_diff(w.heading, spawn.heading).abs() > 135f64.to_radians()
                && (2.0..=15.0).contains(&dist)
                && (d.dot(fwd) / dist).abs() <= 30f64.to_radians().sin()
        })
        .map(|w| w.id)
        .collect()
}

/// Produce one concrete scenario from `seed`.
///
/// Neighbor sampling needs `reference`; any attribute the reference lacks (or carries with
/// a different domain) is drawn at random.
pub fn mutate_scenario<R: Rng + ?Sized>(
    seed: &ScenarioSeed,
    strategy: Strategy,
    reference: Option<&ConcreteScenario>,
    params: &MutationParams,
    rng: &mut R,
) -> Result<ConcreteScenario, MutationError> {
    if seed.paths.is_empty() {
        return Err(MutationError::SeedHasNoPaths(seed.id));
    }
    let reference = match strategy {
        Strategy::Random => None,
        Strategy::Neighbor => Some(
            reference
                .ok_or(MutationError::MissingReference)?
                .attributes
                .iter()
                .map(|a| (a.name.as_str(), a))
                .collect(),
        ),
    };
    let mut s = Sampler {
        rng,
        reference,
        drawn: Vec::new(),
    };

    // Mission
    let mission_paths: Vec<usize> = (0..seed.paths.len())
        .filter(|&i| params.direction.is_none_or(|d| seed.paths[i].direction == d))
        .collect();
    if mission_paths.is_empty() {
        return Err(MutationError::NoPathForDirection {
            seed: seed.id,
            direction: params.direction.unwrap(),
        });
    }
    let mut starts: BTreeMap<WaypointId, Vec<(usize, usize)>> = BTreeMap::new();
    for &pi in &mission_paths {
        let wp = &seed.paths[pi].waypoints;
        for k in 0..wp.len() - 1 {
            if path_remaining(seed, wp, k) >= MIN_MISSION_LENGTH {
                starts.entry(wp[k]).or_default().push((pi, k));
            }
        }
    }
    if starts.is_empty() {
        for &pi in &mission_paths {
            starts.entry(seed.paths[pi].waypoints[0]).or_default().push((pi, 0));
        }
    }
    let start_ids: Vec<WaypointId> = starts.keys().copied().collect();
    let start = start_ids[s.choose("mission.start".into(), start_ids.len())];
    let options = &starts[&start];
    let (pi, k) = options[s.choose("mission.path".into(), options.len())];
    let mission = EgoMission {
        start,
        path: seed.paths[pi].waypoints[k..].to_vec(),
        seed_path: pi,
        direction: seed.paths[pi].direction,
    };
    let ego_wp = seed.waypoint(start).unwrap();
    let mut occupied = vec![footprint(ego_wp, EGO_LENGTH + 2.0, EGO_WIDTH + 1.0)];
    let mut used: BTreeSet<WaypointId> = BTreeSet::from([start]);

    // Puddles
    let n_puddles = s.choose("puddles.count".into(), params.max_puddles + 1);
    let mut puddles = Vec::with_capacity(n_puddles);
    for i in 0..n_puddles {
        let c = s.choose(format!("puddle.{i}.center"), seed.waypoints.len());
        puddles.push(PuddleSpec {
            center: seed.waypoints[c].id,
            radius: s.range(format!("puddle.{i}.radius"), params.puddle_radius, 0.1),
            friction: s.range(format!("puddle.{i}.friction"), params.friction, 0.01),
        });
    }

    // Objects
    let mut path_nodes: BTreeMap<WaypointId, Vec<(usize, usize)>> = BTreeMap::new();
    for (pi, p) in seed.paths.iter().enumerate() {
        for k in 0..p.waypoints.len() - 1 {
            path_nodes.entry(p.waypoints[k]).or_default().push((pi, k));
        }
    }
    let n_objects = s.choose("objects.count".into(), params.max_objects + 1);
    let mut objects = Vec::with_capacity(n_objects);
    for i in 0..n_objects {
        let kind = match s.choose(format!("object.{i}.kind"), 2) {
            0 => ObjectKind::Vehicle,
            _ => ObjectKind::Pedestrian,
        };
        let styles = match kind {
            ObjectKind::Vehicle => VEHICLE_STYLES,
            ObjectKind::Pedestrian => PEDESTRIAN_STYLES,
        };
        let app = Appearance::for_kind(kind, s.choose(format!("object.{i}.appearance"), styles as usize) as u8);
        let color = match kind {
            ObjectKind::Vehicle => Some(COLORS[s.choose(format!("object.{i}.color"), COLORS.len())]),
            ObjectKind::Pedestrian => None,
        };
        let candidates: Vec<&Waypoint> = seed
            .waypoints
            .iter()
            .filter(|w| kind == ObjectKind::Pedestrian || path_nodes.contains_key(&w.id))
            .filter(|w| !used.contains(&w.id))
            .filter(|w| {
                let fp = footprint(w, app.length + 0.5, app.width + 0.5);
                occupied.iter().all(|o| !o.intersects(&fp))
            })
            .collect();
        if candidates.is_empty() {
            log::debug!("seed {}: no free spawn for object {i}", seed.id);
            continue;
        }
        let spawn = candidates[s.choose(format!("object.{i}.spawn"), candidates.len())];
        let (action, path) = match kind {
            ObjectKind::Vehicle => {
                let options = &path_nodes[&spawn.id];
                let (pi, k) = options[s.choose(format!("object.{i}.path"), options.len())];
                let path = seed.paths[pi].waypoints[k..].to_vec();
                let action = match s.choose(format!("object.{i}.action"), 4) {
                    0 => ObjectAction::Immobile,
                    1 => ObjectAction::Linear {
                        speed: s.range(format!("object.{i}.speed"), VEHICLE_SPEED, SPEED_STEP),
                    },
                    2 => {
                        let pts: Vec<Vec2> = path
                            .iter()
                            .map(|&id| seed.waypoint(id).unwrap().position.xy())
                            .collect();
                        let segments = segment_path(&pts)
                            .into_iter()
                            .enumerate()
                            .map(|(j, (length, base))| {
                                let offset = s.range(
                                    format!("object.{i}.seg.{j}.turn"),
                                    (-MANEUVER_PERTURBATION_DEG, MANEUVER_PERTURBATION_DEG),
                                    1.0,
                                );
                                ManeuverSegment {
                                    length,
                                    class: classify_turn(base),
                                    base_turn_deg: base,
                                    turn_deg: base + offset,
                                    speed: s.range(format!("object.{i}.seg.{j}.speed"), VEHICLE_SPEED, SPEED_STEP),
                                }
                            })
                            .collect();
                        ObjectAction::Maneuver { segments }
                    }
                    _ => ObjectAction::Autopilot,
                };
                let path = match action {
                    ObjectAction::Immobile => vec![spawn.id],
                    _ => path,
                };
                (action, ObjectPath::Waypoints(path))
            }
            ObjectKind::Pedestrian => {
                let targets = crossing_targets(seed, spawn);
                let walking = s.choose(format!("object.{i}.action"), 2) == 1;
                if walking && !targets.is_empty() {
                    let to = targets[s.choose(format!("object.{i}.target"), targets.len())];
                    let speed = s.range(format!("object.{i}.speed"), PEDESTRIAN_SPEED, SPEED_STEP);
                    (
                        ObjectAction::Linear { speed },
                        ObjectPath::Crossing { from: spawn.id, to },
                    )
                } else {
                    (ObjectAction::Immobile, ObjectPath::Waypoints(vec![spawn.id]))
                }
            }
        };
        used.insert(spawn.id);
        occupied.push(footprint(spawn, app.length + 0.5, app.width + 0.5));
        objects.push(ObjectSpec {
            kind,
            appearance_id: app.id,
            color,
            action,
            path,
            spawn: spawn.id,
        });
    }

    // Weather
    let mut w = [0.0; 8];
    for (j, ((lo, hi, step), name)) in WeatherParams::ranges().into_iter().zip(WeatherParams::NAMES).enumerate() {
        w[j] = s.range(format!("weather.{name}"), (lo, hi), step);
    }

    Ok(ConcreteScenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        seed_id: seed.id,
        map: seed.map.clone(),
        mission,
        objects,
        puddles,
        weather: WeatherParams::from_array(w),
        attributes: s.drawn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discrete_neighbor_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Domain::Discrete { choices: 26 };
        let m = 12.0; // 'M'
        for _ in 0..2000 {
            let v = sample_attribute(&d, SampleMode::Neighbor { current: m }, &mut rng);
            assert!((7.0..=17.0).contains(&v)); // H..R
        }
    }

    #[test]
    fn continuous_neighbor_clips_at_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Domain::Continuous { min: 0.0, max: 100.0, step: 1.0 };
        let mut seen = BTreeSet::new();
        for _ in 0..2000 {
            let v = sample_attribute(&d, SampleMode::Neighbor { current: 2.0 }, &mut rng);
            assert!((0.0..=7.0).contains(&v));
            seen.insert(v as i64);
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn twenty_five_metres_is_three_segments() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(25.0, 0.0)];
        let segs = segment_path(&pts);
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|(_, d)| *d == 0.0));
        let short = segment_path(&[Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0)]);
        assert_eq!(short.len(), 1);
    }

    #[test]
    fn straight_maneuver_segments_are_straight() {
        let pts: Vec<Vec2> = (0..10).map(|i| Vec2::new(i as f64 * 5.0, 0.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plan = segment_maneuver_path(&pts, &mut rng);
        assert_eq!(plan.len(), 5);
        for seg in plan {
            assert_eq!(seg.class, TurnClass::Straight);
            assert!(seg.turn_deg.abs() <= 20.0);
            assert!((3.0..=10.0).contains(&seg.speed));
        }
    }
}
