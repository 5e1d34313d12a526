//! Planar geometry shared by the map, simulator and analysis code.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Vec2 { x: c, y: s }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Counter-clockwise normal.
    pub fn perp(self) -> Vec2 {
        Vec2 { x: -self.y, y: self.x }
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2 {
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
        }
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Position in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn xy(self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn dist(self, o: Point3) -> f64 {
        let (dx, dy, dz) = (self.x - o.x, self.y - o.y, self.z - o.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn dist_sq(self, o: Point3) -> f64 {
        let (dx, dy, dz) = (self.x - o.x, self.y - o.y, self.z - o.z);
        dx * dx + dy * dy + dz * dz
    }
}

/// Normalize an angle into [-pi, pi).
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2*pi for tiny negative inputs.
    if a >= PI {
        a -= 2.0 * PI;
    }
    a
}

/// Signed smallest difference `to - from`, in [-pi, pi).
pub fn angle_diff(to: f64, from: f64) -> f64 {
    normalize_angle(to - from)
}

/// Oriented bounding box in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Obb {
            center,
            heading,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
        }
    }

    pub fn axes(&self) -> [Vec2; 2] {
        let fwd = Vec2::from_angle(self.heading);
        [fwd, fwd.perp()]
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let [f, l] = self.axes();
        let fl = f * self.half_length;
        let wl = l * self.half_width;
        [
            self.center + fl + wl,
            self.center - fl + wl,
            self.center - fl - wl,
            self.center + fl - wl,
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let d = p - self.center;
        let [f, l] = self.axes();
        d.dot(f).abs() <= self.half_length && d.dot(l).abs() <= self.half_width
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let c = self.center.dot(axis);
        let [f, l] = self.axes();
        let r = self.half_length * f.dot(axis).abs() + self.half_width * l.dot(axis).abs();
        (c - r, c + r)
    }

    /// Separating-axis test; touching boxes count as intersecting.
    pub fn intersects(&self, other: &Obb) -> bool {
        let a = self.axes();
        let b = other.axes();
        for axis in a.iter().chain(b.iter()) {
            let (amin, amax) = self.project(*axis);
            let (bmin, bmax) = other.project(*axis);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
        true
    }

    /// Smallest distance between the two boxes (0 when they intersect).
    pub fn distance(&self, other: &Obb) -> f64 {
        if self.intersects(other) {
            return 0.0;
        }
        let ca = self.corners();
        let cb = other.corners();
        let mut best = f64::INFINITY;
        for i in 0..4 {
            let (a0, a1) = (ca[i], ca[(i + 1) % 4]);
            for j in 0..4 {
                let (b0, b1) = (cb[j], cb[(j + 1) % 4]);
                best = best.min(segment_distance(a0, a1, b0, b1));
            }
        }
        best
    }

    /// Does any edge of the box touch the segment, or does the box contain it.
    pub fn touches_segment(&self, p: Vec2, q: Vec2) -> bool {
        if self.contains(p) || self.contains(q) {
            return true;
        }
        let c = self.corners();
        (0..4).any(|i| segments_intersect(c[i], c[(i + 1) % 4], p, q))
    }
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

pub fn segment_distance(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> f64 {
    if segments_intersect(a0, a1, b0, b1) {
        return 0.0;
    }
    point_segment_distance(a0, b0, b1)
        .min(point_segment_distance(a1, b0, b1))
        .min(point_segment_distance(b0, a0, a1))
        .min(point_segment_distance(b1, a0, a1))
}

/// Cumulative arc length along a polyline, starting at 0.
pub fn cumulative_length(points: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            acc += p.dist(points[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Point at arc length `s` along a polyline (clamped to its ends), with the local heading.
pub fn point_at_length(points: &[Vec2], cum: &[f64], s: f64) -> (Vec2, f64) {
    debug_assert_eq!(points.len(), cum.len());
    if points.len() == 1 {
        return (points[0], 0.0);
    }
    let total = *cum.last().unwrap();
    let s = s.clamp(0.0, total);
    let mut i = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    };
    if i >= points.len() - 1 {
        i = points.len() - 2;
    }
    // Skip zero-length segments so the heading stays meaningful.
    let mut j = i;
    while j + 1 < points.len() - 1 && cum[j + 1] - cum[j] == 0.0 {
        j += 1;
    }
    let seg = cum[i + 1] - cum[i];
    let t = if seg > 0.0 { (s - cum[i]) / seg } else { 0.0 };
    let p = points[i] + (points[i + 1] - points[i]) * t;
    let dir = points[j + 1] - points[j];
    (p, dir.angle())
}

/// Project `p` onto a polyline: returns (arc length of the foot point, signed lateral offset,
/// left positive).
pub fn project_onto_polyline(points: &[Vec2], cum: &[f64], p: Vec2) -> (f64, f64) {
    if points.len() == 1 {
        return (0.0, p.dist(points[0]));
    }
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..points.len() - 1 {
        let a = points[i];
        let ab = points[i + 1] - a;
        let len2 = ab.dot(ab);
        if len2 == 0.0 {
            continue;
        }
        let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
        let foot = a + ab * t;
        let d = p.dist(foot);
        if d < best.0 {
            let side = ab.cross(p - a).signum();
            best = (d, cum[i] + t * len2.sqrt(), side * d);
        }
    }
    (best.1, best.2)
}

/// Resample a polyline to `n` points evenly spaced by arc length.
pub fn resample(points: &[Vec2], n: usize) -> Vec<Vec2> {
    if points.is_empty() || n == 0 {
        return Vec::new();
    }
    let cum = cumulative_length(points);
    let total = *cum.last().unwrap();
    if total == 0.0 || n == 1 {
        return vec![points[0]; n];
    }
    (0..n)
        .map(|k| point_at_length(points, &cum, total * k as f64 / (n - 1) as f64).0)
        .collect()
}
