//! Planar geometry helpers: vectors, rigid frames, polylines.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::SceneError;

/// A 2-D point or vector in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_polar(radius: f64, angle: f64) -> Self {
        Self::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotates counter-clockwise by `angle` radians.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Reference pose of the ego-centred frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    pub origin: Vec2,
    pub heading: f64,
}

impl EgoPose {
    pub fn new(origin: Vec2, heading: f64) -> Self {
        Self { origin, heading }
    }

    fn check(&self) -> Result<(), SceneError> {
        if self.origin.is_finite() && self.heading.is_finite() {
            Ok(())
        } else {
            Err(SceneError::InvalidArgument(format!("non-finite pose {self:?}")))
        }
    }

    /// Heading expressed in this frame.
    pub fn heading_to_local(&self, heading: f64) -> f64 {
        normalize_angle(heading - self.heading)
    }

    pub fn heading_from_local(&self, heading: f64) -> f64 {
        normalize_angle(heading + self.heading)
    }
}

/// Expresses a global point in the frame centred on `pose` with the pose heading along +x.
pub fn to_ego_frame(point: Vec2, pose: &EgoPose) -> Result<Vec2, SceneError> {
    pose.check()?;
    if !point.is_finite() {
        return Err(SceneError::InvalidArgument(format!("non-finite point {point:?}")));
    }
    Ok((point - pose.origin).rotate(-pose.heading))
}

/// Inverse of [`to_ego_frame`].
pub fn from_ego_frame(point: Vec2, pose: &EgoPose) -> Result<Vec2, SceneError> {
    pose.check()?;
    if !point.is_finite() {
        return Err(SceneError::InvalidArgument(format!("non-finite point {point:?}")));
    }
    Ok(point.rotate(pose.heading) + pose.origin)
}

/// Intersection of segments `a0-a1` and `b0-b1`, returned as the parameters along each
/// segment together with the point. Parallel or collinear segments yield `None`.
pub fn segment_intersection(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> Option<(f64, f64, Vec2)> {
    let r = a1 - a0;
    let s = b1 - b0;
    let denom = r.cross(s);
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = b0 - a0;
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    const SLACK: f64 = 1e-12;
    if (-SLACK..=1.0 + SLACK).contains(&t) && (-SLACK..=1.0 + SLACK).contains(&u) {
        Some((t, u, a0 + r * t))
    } else {
        None
    }
}

/// Projection of a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
    pub distance: f64,
    /// Direction of the segment containing the foot point.
    pub heading: f64,
}

/// Read-only view over a polyline with cumulative arc lengths.
#[derive(Debug, Clone)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Panics if fewer than two points are given.
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(points.len() >= 2, "polyline needs at least two points");
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        Self { points, cumulative }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment_heading(&self, i: usize) -> f64 {
        (self.points[i + 1] - self.points[i]).angle()
    }

    /// Position and tangent heading at arc length `s`; extrapolates linearly past either end.
    pub fn sample(&self, s: f64) -> (Vec2, f64) {
        let n = self.points.len();
        let seg = if s <= 0.0 {
            0
        } else if s >= self.length() {
            n - 2
        } else {
            match self.cumulative.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
                Ok(i) => i.min(n - 2),
                Err(i) => i - 1,
            }
        };
        // skip zero-length segments
        let mut seg = seg;
        while seg + 1 < n - 1 && self.cumulative[seg + 1] - self.cumulative[seg] < 1e-12 {
            seg += 1;
        }
        let heading = self.segment_heading(seg);
        let p = self.points[seg] + Vec2::from_polar(s - self.cumulative[seg], heading);
        (p, heading)
    }

    pub fn project(&self, p: Vec2) -> Projection {
        let mut best: Option<Projection> = None;
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let d = self.points[i + 1] - a;
            let len_sq = d.norm_sq();
            if len_sq < 1e-18 {
                continue;
            }
            let u = ((p - a).dot(d) / len_sq).clamp(0.0, 1.0);
            let foot = a + d * u;
            let distance = p.distance(foot);
            if best.as_ref().is_none_or(|b| distance < b.distance) {
                let lateral = d.cross(p - a) / len_sq.sqrt();
                best = Some(Projection {
                    s: self.cumulative[i] + u * len_sq.sqrt(),
                    lateral,
                    distance,
                    heading: d.angle(),
                });
            }
        }
        best.expect("polyline has a non-degenerate segment")
    }

    /// First crossing with `other`, ordered by arc length along `self`.
    /// Returns `(s_self, s_other, point)`.
    pub fn first_intersection(&self, other: &Polyline) -> Option<(f64, f64, Vec2)> {
        let mut best: Option<(f64, f64, Vec2)> = None;
        for i in 0..self.points.len() - 1 {
            for j in 0..other.points.len() - 1 {
                if let Some((t, u, p)) =
                    segment_intersection(self.points[i], self.points[i + 1], other.points[j], other.points[j + 1])
                {
                    let s_self = self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i]);
                    let s_other = other.cumulative[j] + u * (other.cumulative[j + 1] - other.cumulative[j]);
                    if best.is_none_or(|b| s_self < b.0) {
                        best = Some((s_self, s_other, p));
                    }
                }
            }
            if best.is_some() {
                // later segments of self cannot produce an earlier crossing
                break;
            }
        }
        best
    }

    /// The part of the polyline from arc length `s` onward.
    pub fn tail_from(&self, s: f64) -> Polyline {
        let (start, _) = self.sample(s.clamp(0.0, self.length()));
        let mut pts = vec![start];
        for (i, p) in self.points.iter().enumerate() {
            if self.cumulative[i] > s + 1e-9 {
                pts.push(*p);
            }
        }
        if pts.len() < 2 {
            let (end, h) = self.sample(self.length());
            pts.push(end + Vec2::from_polar(1.0, h));
        }
        Polyline::new(pts)
    }
}

/// Curvature of the circle through three points; zero for collinear or coincident points.
pub fn three_point_curvature(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let ab = a.distance(b);
    let bc = b.distance(c);
    let ca = c.distance(a);
    let denom = ab * bc * ca;
    if denom < 1e-12 {
        return 0.0;
    }
    let twice_area = (b - a).cross(c - a);
    2.0 * twice_area.abs() / denom
}
