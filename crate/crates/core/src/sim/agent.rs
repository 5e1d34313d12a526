use super::*;
use crate::geometry::{angle_diff, cumulative_length, point_at_length, project_onto_polyline};
use crate::scenario::{is_reddish, WeatherParams};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{0}")]
pub struct AgentFault(pub String);

/// Ground-truth filter standing in for the agent's sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perception {
    pub range: f64,
    /// Objects lower than this (m) are not detected.
    pub height_cutoff: f64,
    /// Scale range by (1 - 0.6 fog/100)(1 - 0.3 rain/100).
    pub weather_degradation: bool,
    /// Red vehicles are not detected.
    pub red_blind: bool,
}

impl Default for Perception {
    fn default() -> Self {
        Perception {
            range: 60.0,
            height_cutoff: 0.0,
            weather_degradation: false,
            red_blind: false,
        }
    }
}

impl Perception {
    pub fn effective_range(&self, w: &WeatherParams) -> f64 {
        if self.weather_degradation {
            self.range * (1.0 - 0.6 * w.fog / 100.0) * (1.0 - 0.3 * w.rain / 100.0)
        } else {
            self.range
        }
    }

    pub fn detects(&self, info: &EntityInfo, distance: f64, weather: &WeatherParams) -> bool {
        distance <= self.effective_range(weather)
            && info.height >= self.height_cutoff
            && !(self.red_blind && info.color.is_some_and(is_reddish))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub id: u32,
    pub kind: crate::scenario::ObjectKind,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibleLight {
    pub id: SignalId,
    pub phase: LightPhase,
    /// Distance along the route from the ego position to the stop line.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tick: u64,
    pub time: f64,
    pub ego: EgoState,
    /// Route ahead, starting at the ego's projection onto the mission path.
    pub route: Vec<Vec2>,
    pub route_remaining: f64,
    pub objects: Vec<DetectedObject>,
    pub light: Option<VisibleLight>,
    pub speed_limit: f64,
    pub weather: WeatherParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInfo {
    pub map: String,
    pub dt: f64,
    pub route: Vec<Vec2>,
}

/// The system under test.
pub trait Agent {
    fn name(&self) -> &str;
    fn version(&self) -> String {
        "1".into()
    }
    fn perception(&self) -> Perception {
        Perception::default()
    }
    fn reset(&mut self, _info: &EpisodeInfo) -> Result<(), AgentFault> {
        Ok(())
    }
    fn control(&mut self, obs: &Observation) -> Result<Control, AgentFault>;
}

/// Brakes forever.
#[derive(Debug, Clone, Default)]
pub struct IdleAgent;

impl Agent for IdleAgent {
    fn name(&self) -> &str {
        "idle"
    }

    fn control(&mut self, _obs: &Observation) -> Result<Control, AgentFault> {
        Ok(Control::full_brake())
    }
}

/// Pure-pursuit route follower that stops for obstacles in its corridor and for red lights.
#[derive(Debug, Clone)]
pub struct BasicAgent {
    name: String,
    perception: Perception,
    /// Yield to crossing traffic predicted to enter the corridor.
    pub lateral_yield: bool,
    pub cruise_factor: f64,
    pub comfort_decel: f64,
    pub lateral_accel: f64,
}

pub const AGENT_NAMES: [&str; 3] = ["basic", "weak", "idle"];

impl BasicAgent {
    pub fn basic() -> Self {
        BasicAgent {
            name: "basic".into(),
            perception: Perception::default(),
            lateral_yield: true,
            cruise_factor: 0.9,
            comfort_decel: 2.5,
            lateral_accel: 2.0,
        }
    }

    /// `basic` with a height blind spot, weather-degraded range, red blindness and no
    /// yielding to lateral traffic.
    pub fn weak() -> Self {
        BasicAgent {
            name: "weak".into(),
            perception: Perception {
                range: 50.0,
                height_cutoff: 1.0,
                weather_degradation: true,
                red_blind: true,
            },
            lateral_yield: false,
            ..BasicAgent::basic()
        }
    }

    pub fn with_perception(mut self, perception: Perception) -> Self {
        self.perception = perception;
        self
    }

    fn steer(&self, obs: &Observation, cum: &[f64]) -> f64 {
        let v = obs.ego.speed;
        let lookahead = (2.0 + 0.5 * v).clamp(3.0, 10.0);
        let pos = obs.ego.position();
        let (target, _) = if obs.route.len() > 1 {
            point_at_length(&obs.route, cum, lookahead)
        } else {
            (obs.route.first().copied().unwrap_or(pos), 0.0)
        };
        let to = target - pos;
        if to.norm() < 1e-6 {
            return 0.0;
        }
        let alpha = angle_diff(to.angle(), obs.ego.heading);
        let delta = (2.0 * WHEELBASE * alpha.sin() / to.norm().max(lookahead)).atan();
        (delta / MAX_STEER_RAD).clamp(-1.0, 1.0)
    }

    /// Speed targets ahead as (target speed, distance to where it applies).
    fn constraints(&self, obs: &Observation, cum: &[f64]) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let pts = &obs.route;
        for i in 1..pts.len().saturating_sub(1) {
            if cum[i] > 40.0 {
                break;
            }
            let a = pts[i] - pts[i - 1];
            let b = pts[i + 1] - pts[i];
            if a.norm() < 1.0 || b.norm() < 1.0 {
                continue;
            }
            let kappa = angle_diff(b.angle(), a.angle()).abs() / (0.5 * (a.norm() + b.norm()));
            if kappa > 1e-4 {
                out.push(((self.lateral_accel / kappa).sqrt(), cum[i]));
            }
        }
        out.push((0.0, obs.route_remaining));
        self.obstacles(obs, cum, &mut out);
        if let Some(l) = obs.light {
            let d = l.distance - EGO_LENGTH / 2.0 - 1.0;
            let v = obs.ego.speed;
            let stop = match l.phase {
                LightPhase::Red => l.distance > EGO_LENGTH / 2.0,
                LightPhase::Yellow => v * v / (2.0 * 6.0) < d,
                LightPhase::Green => false,
            };
            if stop {
                out.push((0.0, d));
            }
        }
        out
    }

    fn obstacles(&self, obs: &Observation, cum: &[f64], out: &mut Vec<(f64, f64)>) {
        if obs.route.len() < 2 {
            return;
        }
        for o in &obs.objects {
            let p = Vec2::new(o.x, o.y);
            let margin = EGO_WIDTH / 2.0 + o.width.max(o.length).min(2.5) / 2.0 + 0.8;
            let radius = 0.5 * o.length.max(o.width);
            let (s, lat) = project_onto_polyline(&obs.route, cum, p);
            if s > 0.0 && s < 50.0 && lat.abs() < margin {
                let along = point_at_length(&obs.route, cum, s).1;
                let v_along = (o.speed * angle_diff(o.heading, along).cos()).max(0.0);
                out.push((v_along, s - EGO_LENGTH / 2.0 - radius - 2.5));
                continue;
            }
            if self.lateral_yield && o.speed > 0.3 {
                let step = Vec2::from_angle(o.heading) * (o.speed * 0.25);
                for k in 1..=12 {
                    let q = p + step * k as f64;
                    let (s, lat) = project_onto_polyline(&obs.route, cum, q);
                    if s > 0.0 && s < 30.0 && lat.abs() < margin {
                        out.push((0.0, s - EGO_LENGTH / 2.0 - radius - 3.0));
                        break;
                    }
                }
            }
        }
    }
}

impl Agent for BasicAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn perception(&self) -> Perception {
        self.perception
    }

    fn control(&mut self, obs: &Observation) -> Result<Control, AgentFault> {
        let cum = cumulative_length(&obs.route);
        let steer = self.steer(obs, &cum);
        let v = obs.ego.speed;
        let b = self.comfort_decel;
        let mut accel = 1.5 * (self.cruise_factor * obs.speed_limit - v);
        let mut hold = false;
        for (vc, d) in self.constraints(obs, &cum) {
            let d = d.max(0.0);
            if vc < 0.1 && d < 0.3 {
                hold = true;
            }
            let profile = (vc * vc + 2.0 * b * d).sqrt();
            let a = if vc < 0.1 && profile <= v + 0.05 {
                -v * v / (2.0 * d.max(0.05))
            } else {
                1.5 * (profile - v)
            };
            accel = accel.min(a);
        }
        let accel = accel.clamp(-MAX_BRAKE_DECEL, 0.7 * MAX_THROTTLE_ACCEL);
        let mut c = Control {
            throttle: 0.0,
            brake: 0.0,
            steer,
        };
        if hold && v < 0.5 {
            c.brake = 1.0;
        } else if accel >= 0.0 {
            c.throttle = accel / MAX_THROTTLE_ACCEL;
        } else {
            c.brake = -accel / MAX_BRAKE_DECEL;
        }
        Ok(c)
    }
}

pub fn agent_by_name(name: &str) -> Option<Box<dyn Agent>> {
    match name {
        "basic" => Some(Box::new(BasicAgent::basic())),
        "weak" => Some(Box::new(BasicAgent::weak())),
        "idle" => Some(Box::new(IdleAgent)),
        _ => None,
    }
}
