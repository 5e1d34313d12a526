use super::*;
use crate::geometry::{cumulative_length, point_at_length, Obb, Vec2};
use crate::map::{
    build_topology, LinkElement, MapError, RoadMark, RoadNetwork, SignalId, SignalKind,
    TopologyGraph, WaypointId,
};
use crate::scenario::{ConcreteScenario, ObjectAction, ObjectPath};
use std::collections::HashMap;

pub const WHEELBASE: f64 = 2.7;
pub const MAX_STEER_RAD: f64 = 35.0 * std::f64::consts::PI / 180.0;
pub const MAX_THROTTLE_ACCEL: f64 = 4.0;
pub const MAX_BRAKE_DECEL: f64 = 8.0;
pub const LIGHT_CYCLE_S: f64 = 30.0;
pub const GREEN_S: f64 = 12.0;
pub const YELLOW_S: f64 = 3.0;
/// Pedestrians walk this far past their crossing target before leaving the scene.
pub const CROSSING_OVERRUN: f64 = 3.0;
const GRID_CELL: f64 = 10.0;

/// Fixed schedule: green, yellow, then red for the rest of a 30 s cycle. Even ids run half
/// a cycle out of phase with odd ids.
pub fn light_phase(id: SignalId, time: f64) -> LightPhase {
    let offset = if id.is_multiple_of(2) { LIGHT_CYCLE_S / 2.0 } else { 0.0 };
    let local = (time + offset).rem_euclid(LIGHT_CYCLE_S);
    if local < GREEN_S {
        LightPhase::Green
    } else if local < GREEN_S + YELLOW_S {
        LightPhase::Yellow
    } else {
        LightPhase::Red
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopLine {
    /// Last waypoint of the approach lane.
    pub waypoint: WaypointId,
    pub position: Vec2,
    pub heading: f64,
    pub half_width: f64,
    pub light: SignalId,
}

impl StopLine {
    /// Signed distance of `p` past the line along the driving direction.
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        (p - self.position).dot(Vec2::from_angle(self.heading))
    }

    pub fn lateral(&self, p: Vec2) -> f64 {
        (p - self.position).dot(Vec2::from_angle(self.heading).perp())
    }
}

/// Static per-map data shared by every run: topology, stop lines, and solid markings.
#[derive(Debug, Clone)]
pub struct MapContext {
    pub net: RoadNetwork,
    pub graph: TopologyGraph,
    pub stop_lines: Vec<StopLine>,
    pub solid_segments: Vec<(Vec2, Vec2)>,
    grid: HashMap<(i64, i64), Vec<usize>>,
}

fn cell(p: Vec2) -> (i64, i64) {
    ((p.x / GRID_CELL).floor() as i64, (p.y / GRID_CELL).floor() as i64)
}

impl MapContext {
    pub fn new(net: RoadNetwork, spacing: f64) -> Result<Self, MapError> {
        let graph = build_topology(&net, spacing)?;
        Ok(Self::with_graph(net, graph))
    }

    pub fn with_graph(net: RoadNetwork, graph: TopologyGraph) -> Self {
        let mut stop_lines = Vec::new();
        for chain in &graph.lanes {
            let road = net.road(chain.road).unwrap();
            if road.junction.is_some() {
                continue;
            }
            let forward = chain.lane < 0;
            let exit_link = if forward { &road.successor } else { &road.predecessor };
            let at_boundary = if forward {
                chain.section + 1 == road.lane_sections.len()
            } else {
                chain.section == 0
            };
            let into_junction = matches!(exit_link, Some(l) if matches!(l.element, LinkElement::Junction(_)));
            if !at_boundary || !into_junction {
                continue;
            }
            let exit_s = if forward { road.length } else { 0.0 };
            let light = net
                .signals
                .iter()
                .filter(|s| s.road == road.id && s.kind == SignalKind::TrafficLight && s.applies_to_lane(chain.lane))
                .min_by(|a, b| (a.s - exit_s).abs().total_cmp(&(b.s - exit_s).abs()));
            let Some(light) = light else { continue };
            let wp = &graph.waypoints[*chain.nodes.last().unwrap() as usize];
            let width = road.lane_sections[chain.section]
                .lane(chain.lane)
                .map(|l| l.width)
                .unwrap_or(3.5);
            stop_lines.push(StopLine {
                waypoint: wp.id,
                position: wp.position.xy(),
                heading: wp.heading,
                half_width: width / 2.0,
                light: light.id,
            });
        }

        let mut solid_segments = Vec::new();
        for road in &net.roads {
            for (k, sec) in road.lane_sections.iter().enumerate() {
                let (s0, s1) = road.section_range(k);
                let mut offsets = Vec::new();
                if sec.center_mark == RoadMark::Solid {
                    offsets.push(0.0);
                }
                for lane in &sec.lanes {
                    if lane.road_mark == RoadMark::Solid {
                        offsets.push(sec.lane_offsets(lane.id).unwrap().1);
                    }
                }
                let n = ((s1 - s0) / 2.0).ceil().max(1.0) as usize;
                for t in offsets {
                    let pts: Vec<Vec2> = (0..=n)
                        .map(|i| road.pose_at(s0 + (s1 - s0) * i as f64 / n as f64, t).0)
                        .collect();
                    solid_segments.extend(pts.windows(2).map(|w| (w[0], w[1])));
                }
            }
        }
        let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, (a, b)) in solid_segments.iter().enumerate() {
            let (c0, c1) = (cell(Vec2::new(a.x.min(b.x), a.y.min(b.y))), cell(Vec2::new(a.x.max(b.x), a.y.max(b.y))));
            for cx in c0.0..=c1.0 {
                for cy in c0.1..=c1.1 {
                    grid.entry((cx, cy)).or_default().push(i);
                }
            }
        }
        MapContext {
            net,
            graph,
            stop_lines,
            solid_segments,
            grid,
        }
    }

    /// Lowest-index solid marking segment touched by `b`.
    pub fn solid_crossing(&self, b: &Obb) -> Option<usize> {
        let corners = b.corners();
        let lo = Vec2::new(
            corners.iter().map(|c| c.x).fold(f64::INFINITY, f64::min),
            corners.iter().map(|c| c.y).fold(f64::INFINITY, f64::min),
        );
        let hi = Vec2::new(
            corners.iter().map(|c| c.x).fold(f64::NEG_INFINITY, f64::max),
            corners.iter().map(|c| c.y).fold(f64::NEG_INFINITY, f64::max),
        );
        let (c0, c1) = (cell(lo), cell(hi));
        let mut best: Option<usize> = None;
        for cx in c0.0..=c1.0 {
            for cy in c0.1..=c1.1 {
                for &i in self.grid.get(&(cx, cy)).into_iter().flatten() {
                    if best.is_some_and(|b| b <= i) {
                        continue;
                    }
                    let (p, q) = self.solid_segments[i];
                    if b.touches_segment(p, q) {
                        best = Some(i);
                    }
                }
            }
        }
        best
    }

    /// Speed limit of the road under the nearest waypoint.
    pub fn speed_limit_at(&self, p: Vec2) -> f64 {
        let pos = crate::geometry::Point3::new(p.x, p.y, 0.0);
        match self.graph.nearest_waypoint(pos) {
            Ok(w) => self.net.road(w.road).map(|r| r.speed_limit).unwrap_or(crate::map::DEFAULT_SPEED_LIMIT),
            Err(_) => crate::map::DEFAULT_SPEED_LIMIT,
        }
    }

    pub fn stop_line_at(&self, waypoint: WaypointId) -> Option<&StopLine> {
        self.stop_lines.iter().find(|s| s.waypoint == waypoint)
    }

    pub fn position(&self, id: WaypointId) -> Vec2 {
        self.graph.waypoints[id as usize].position.xy()
    }

    pub fn polyline(&self, ids: &[WaypointId]) -> Vec<Vec2> {
        ids.iter().map(|&i| self.position(i)).collect()
    }
}

/// Precomputed motion plan of one object.
#[derive(Debug, Clone)]
pub(crate) enum Track {
    Static,
    Polyline {
        points: Vec<Vec2>,
        cum: Vec<f64>,
        /// Stop lines along the track as (arc length, light id).
        stops: Vec<(f64, SignalId)>,
    },
    DeadReckon {
        /// (length, curvature, speed) per segment.
        segments: Vec<(f64, f64, f64)>,
    },
}

/// A scenario bound to a map and ready to step.
#[derive(Debug, Clone)]
pub struct SimScenario {
    pub(crate) entities: Vec<EntityInfo>,
    pub(crate) tracks: Vec<Track>,
    pub(crate) actions: Vec<ObjectAction>,
    pub(crate) route: Vec<Vec2>,
    pub(crate) route_cum: Vec<f64>,
    pub(crate) route_ids: Vec<WaypointId>,
}

impl SimScenario {
    pub fn route(&self) -> &[Vec2] {
        &self.route
    }

    pub fn route_length(&self) -> f64 {
        *self.route_cum.last().unwrap_or(&0.0)
    }

    pub fn entities(&self) -> &[EntityInfo] {
        &self.entities
    }
}

fn track_stops(ctx: &MapContext, ids: &[WaypointId], cum: &[f64]) -> Vec<(f64, SignalId)> {
    ids.iter()
        .zip(cum)
        .filter_map(|(&id, &s)| ctx.stop_line_at(id).map(|l| (s, l.light)))
        .collect()
}

/// Set up the initial world for `sc`: ego at the mission start, objects at their spawns,
/// lights on the fixed schedule, puddles registered.
pub fn instantiate_scenario(
    sc: &ConcreteScenario,
    ctx: &MapContext,
) -> Result<(SimScenario, WorldState), SimError> {
    let n = ctx.graph.len() as WaypointId;
    let check = |id: WaypointId| {
        if id < n {
            Ok(())
        } else {
            Err(SimError::UnknownWaypoint(id))
        }
    };
    for &id in &sc.mission.path {
        check(id)?;
    }
    let route = ctx.polyline(&sc.mission.path);
    let route_cum = cumulative_length(&route);
    let start = &ctx.graph.waypoints[sc.mission.start as usize];
    let ego = EgoState {
        x: start.position.x,
        y: start.position.y,
        heading: start.heading,
        speed: 0.0,
        accel: 0.0,
        steer: 0.0,
        throttle: 0.0,
        brake: 0.0,
    };

    let mut entities = Vec::new();
    let mut tracks = Vec::new();
    let mut states = Vec::new();
    for (i, o) in sc.objects.iter().enumerate() {
        check(o.spawn)?;
        let app = o.appearance();
        entities.push(EntityInfo {
            id: i as u32,
            kind: o.kind,
            appearance_id: o.appearance_id,
            color: o.color,
            length: app.length,
            width: app.width,
            height: app.height,
        });
        let spawn = &ctx.graph.waypoints[o.spawn as usize];
        let mut heading = spawn.heading;
        let track = match (&o.action, &o.path) {
            (ObjectAction::Immobile, _) => Track::Static,
            (ObjectAction::Maneuver { segments }, _) => Track::DeadReckon {
                segments: segments
                    .iter()
                    .map(|s| (s.length, s.turn_deg.to_radians() / s.length.max(1e-6), s.speed))
                    .collect(),
            },
            (_, ObjectPath::Waypoints(ids)) => {
                for &id in ids {
                    check(id)?;
                }
                let points = ctx.polyline(ids);
                let cum = cumulative_length(&points);
                let stops = track_stops(ctx, ids, &cum);
                if points.len() > 1 {
                    heading = point_at_length(&points, &cum, 0.0).1;
                }
                Track::Polyline { points, cum, stops }
            }
            (_, ObjectPath::Crossing { from, to }) => {
                check(*to)?;
                let a = ctx.position(*from);
                let b = ctx.position(*to);
                let dir = (b - a) * (1.0 / (b - a).norm().max(1e-9));
                let points = vec![a, b, b + dir * CROSSING_OVERRUN];
                let cum = cumulative_length(&points);
                heading = dir.angle();
                Track::Polyline {
                    points,
                    cum,
                    stops: Vec::new(),
                }
            }
        };
        let speed = match &o.action {
            ObjectAction::Linear { speed } => *speed,
            ObjectAction::Maneuver { segments } => segments.first().map(|s| s.speed).unwrap_or(0.0),
            _ => 0.0,
        };
        states.push(ObjectState {
            x: spawn.position.x,
            y: spawn.position.y,
            heading,
            speed,
            progress: 0.0,
            active: true,
        });
        tracks.push(track);
    }

    let ego_box = Obb::new(Vec2::new(ego.x, ego.y), ego.heading, EGO_LENGTH, EGO_WIDTH);
    let boxes: Vec<Obb> = states
        .iter()
        .zip(&entities)
        .map(|(s, e)| Obb::new(Vec2::new(s.x, s.y), s.heading, e.length, e.width))
        .collect();
    for (i, b) in boxes.iter().enumerate() {
        if b.intersects(&ego_box) {
            return Err(SimError::SpawnCollision { a: None, b: i as u32 });
        }
        for (j, c) in boxes.iter().enumerate().skip(i + 1) {
            if b.intersects(c) {
                return Err(SimError::SpawnCollision {
                    a: Some(i as u32),
                    b: j as u32,
                });
            }
        }
    }

    let puddles = sc
        .puddles
        .iter()
        .map(|p| {
            check(p.center)?;
            let c = ctx.position(p.center);
            Ok(Puddle {
                x: c.x,
                y: c.y,
                radius: p.radius,
                friction: p.friction,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let mut light_ids: Vec<SignalId> = ctx.net.traffic_lights().map(|l| l.id).collect();
    light_ids.sort_unstable();
    let lights = light_ids
        .into_iter()
        .map(|id| LightState {
            id,
            phase: light_phase(id, 0.0),
        })
        .collect();

    let sim = SimScenario {
        entities,
        tracks,
        actions: sc.objects.iter().map(|o| o.action.clone()).collect(),
        route,
        route_cum,
        route_ids: sc.mission.path.clone(),
    };
    let world = WorldState {
        tick: 0,
        time: 0.0,
        ego,
        objects: states,
        lights,
        puddles,
    };
    Ok((sim, world))
}

/// Friction under `p`: the lowest coefficient of any covering puddle, else 1.
pub fn friction_at(puddles: &[Puddle], p: Vec2) -> f64 {
    puddles
        .iter()
        .filter(|d| Vec2::new(d.x, d.y).dist(p) <= d.radius)
        .map(|d| d.friction)
        .fold(1.0, f64::min)
}

/// Kinematic bicycle update of the ego vehicle.
pub fn step_ego(ego: &EgoState, control: Control, friction: f64, dt: f64) -> EgoState {
    let c = control.clamped();
    let accel = MAX_THROTTLE_ACCEL * c.throttle - MAX_BRAKE_DECEL * c.brake * friction;
    let delta = c.steer * MAX_STEER_RAD;
    let x = ego.x + ego.speed * ego.heading.cos() * dt;
    let y = ego.y + ego.speed * ego.heading.sin() * dt;
    let heading = crate::geometry::normalize_angle(ego.heading + ego.speed / WHEELBASE * delta.tan() * dt);
    let mut speed = ego.speed + accel * dt;
    if speed < 0.0 || speed.abs() < 1e-9 {
        speed = 0.0;
    }
    EgoState {
        x,
        y,
        heading,
        speed,
        accel: (speed - ego.speed) / dt,
        steer: c.steer,
        throttle: c.throttle,
        brake: c.brake,
    }
}

const AUTOPILOT_ACCEL: f64 = 3.0;
const AUTOPILOT_DECEL: f64 = 6.0;
pub const AUTOPILOT_HEADWAY: f64 = 8.0;

fn autopilot_target(
    ctx: &MapContext,
    world: &WorldState,
    sim: &SimScenario,
    idx: usize,
    points: &[Vec2],
    cum: &[f64],
    stops: &[(f64, SignalId)],
) -> f64 {
    let me = &world.objects[idx];
    let pos = Vec2::new(me.x, me.y);
    let mut target = ctx.speed_limit_at(pos);
    let half = sim.entities[idx].length / 2.0;
    let mut others: Vec<(Vec2, f64)> = vec![(Vec2::new(world.ego.x, world.ego.y), EGO_LENGTH / 2.0)];
    for (j, o) in world.objects.iter().enumerate() {
        if j != idx && o.active {
            others.push((Vec2::new(o.x, o.y), sim.entities[j].length / 2.0));
        }
    }
    for (p, other_half) in others {
        let (s, lat) = crate::geometry::project_onto_polyline(points, cum, p);
        let ahead = s - me.progress;
        if ahead > 0.0 && ahead < 40.0 && lat.abs() < 2.0 {
            let gap = ahead - half - other_half - AUTOPILOT_HEADWAY;
            target = target.min((2.0 * AUTOPILOT_DECEL * gap.max(0.0)).sqrt());
        }
    }
    for &(s, light) in stops {
        let d = s - me.progress - half;
        if d > -0.5 {
            let phase = light_phase(light, world.time);
            let stop_for = match phase {
                LightPhase::Red => true,
                LightPhase::Yellow => me.speed * me.speed / (2.0 * AUTOPILOT_DECEL) < d,
                LightPhase::Green => false,
            };
            if stop_for {
                target = target.min((2.0 * AUTOPILOT_DECEL * (d - 1.0).max(0.0)).sqrt());
            }
        }
    }
    target
}

/// Advance every object by one tick. Objects past the end of their plan leave the scene.
pub fn step_objects(ctx: &MapContext, sim: &SimScenario, world: &WorldState, dt: f64) -> Vec<ObjectState> {
    let mut next = world.objects.clone();
    for (i, o) in next.iter_mut().enumerate() {
        if !o.active {
            continue;
        }
        match &sim.tracks[i] {
            Track::Static => {}
            Track::Polyline { points, cum, stops } => {
                let total = *cum.last().unwrap();
                let speed = match sim.actions[i] {
                    ObjectAction::Autopilot => {
                        let target = autopilot_target(ctx, world, sim, i, points, cum, stops);
                        (o.speed + (target - o.speed).clamp(-AUTOPILOT_DECEL * dt, AUTOPILOT_ACCEL * dt)).max(0.0)
                    }
                    _ => o.speed,
                };
                o.speed = speed;
                o.progress += speed * dt;
                if o.progress >= total {
                    o.active = false;
                    o.progress = total;
                }
                let (p, h) = point_at_length(points, cum, o.progress);
                o.x = p.x;
                o.y = p.y;
                if points.len() > 1 {
                    o.heading = h;
                }
            }
            Track::DeadReckon { segments } => {
                let mut acc = 0.0;
                let mut seg = None;
                for &(len, k, v) in segments {
                    if o.progress < acc + len {
                        seg = Some((k, v));
                        break;
                    }
                    acc += len;
                }
                match seg {
                    Some((k, v)) => {
                        o.speed = v;
                        let ds = v * dt;
                        o.x += ds * o.heading.cos();
                        o.y += ds * o.heading.sin();
                        o.heading = crate::geometry::normalize_angle(o.heading + k * ds);
                        o.progress += ds;
                    }
                    None => o.active = false,
                }
            }
        }
    }
    next
}

/// One simulation step for ego control `control`.
pub fn step_world(ctx: &MapContext, sim: &SimScenario, world: &WorldState, control: Control, dt: f64) -> WorldState {
    let mu = friction_at(&world.puddles, Vec2::new(world.ego.x, world.ego.y));
    let ego = step_ego(&world.ego, control, mu, dt);
    let objects = step_objects(ctx, sim, world, dt);
    let tick = world.tick + 1;
    let time = tick as f64 * dt;
    WorldState {
        tick,
        time,
        ego,
        objects,
        lights: world
            .lights
            .iter()
            .map(|l| LightState {
                id: l.id,
                phase: light_phase(l.id, time),
            })
            .collect(),
        puddles: world.puddles.clone(),
    }
}
