//! Trajectory synthesis: a per-axis quintic from the current state to an endpoint, and a
//! kinematic feasibility check over the sampled result.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{lateral_accelerations, longitudinal_accelerations};
use crate::scene::{normalize_angle, TrajectoryPoint, Vec2, DEFAULT_DT, DEFAULT_HORIZON_LEN};

const HEADING_SPEED_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub dt: f64,
    pub steps: usize,
    pub v_max: f64,
    pub a_long_max: f64,
    pub a_lat_max: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, steps: DEFAULT_HORIZON_LEN, v_max: 30.0, a_long_max: 8.0, a_lat_max: 6.0 }
    }
}

impl PlannerConfig {
    fn check(&self) -> Result<(), SynthError> {
        let positive = [self.dt, self.v_max, self.a_long_max, self.a_lat_max];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SynthError::InvalidArgument(format!("planner limits must be positive: {self:?}")));
        }
        if self.steps < 2 {
            return Err(SynthError::InvalidArgument(format!("need at least 2 steps, got {}", self.steps)));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.steps as f64 * self.dt
    }
}

/// Position, velocity and acceleration at one end of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
}

impl BoundaryState {
    pub fn new(position: Vec2, velocity: Vec2, acceleration: Vec2) -> Self {
        Self { x: position.x, y: position.y, vx: velocity.x, vy: velocity.y, ax: acceleration.x, ay: acceleration.y }
    }

    /// Boundary at `p` moving along its heading at its speed with the given
    /// tangential acceleration.
    pub fn from_point(p: &TrajectoryPoint, tangential_accel: f64) -> Self {
        Self::new(p.position(), p.velocity(), Vec2::from_polar(tangential_accel, p.heading))
    }

    fn is_finite(&self) -> bool {
        [self.x, self.y, self.vx, self.vy, self.ax, self.ay].iter().all(|v| v.is_finite())
    }
}

/// One quintic polynomial `sum c_i t^i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quintic {
    pub coeffs: [f64; 6],
}

impl Quintic {
    /// Matches position, velocity and acceleration at `t = 0` and `t = duration`.
    pub fn fit(p0: f64, v0: f64, a0: f64, p1: f64, v1: f64, a1: f64, duration: f64) -> Self {
        let t = duration;
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        let dp = p1 - p0;
        Self {
            coeffs: [
                p0,
                v0,
                0.5 * a0,
                (20.0 * dp - (8.0 * v1 + 12.0 * v0) * t - (3.0 * a0 - a1) * t2) / (2.0 * t3),
                (-30.0 * dp + (14.0 * v1 + 16.0 * v0) * t + (3.0 * a0 - 2.0 * a1) * t2) / (2.0 * t4),
                (12.0 * dp - 6.0 * (v1 + v0) * t - (a0 - a1) * t2) / (2.0 * t5),
            ],
        }
    }

    pub fn position(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn velocity(&self, t: f64) -> f64 {
        let c = &self.coeffs;
        c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])))
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        let c = &self.coeffs;
        2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]))
    }
}

/// Per-axis quintic pair over the planning duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuinticPlan {
    pub x: Quintic,
    pub y: Quintic,
    pub duration: f64,
}

impl QuinticPlan {
    pub fn new(start: &BoundaryState, end: &BoundaryState, duration: f64) -> Self {
        Self {
            x: Quintic::fit(start.x, start.vx, start.ax, end.x, end.vx, end.ax, duration),
            y: Quintic::fit(start.y, start.vy, start.ay, end.y, end.vy, end.ay, duration),
            duration,
        }
    }

    pub fn position(&self, t: f64) -> Vec2 {
        Vec2::new(self.x.position(t), self.y.position(t))
    }

    pub fn velocity(&self, t: f64) -> Vec2 {
        Vec2::new(self.x.velocity(t), self.y.velocity(t))
    }
}

/// Samples the quintic at `k * dt` for `k = 1..=steps`; timestamps are relative to the start.
pub fn plan_quintic(
    start: &BoundaryState,
    end: &BoundaryState,
    config: &PlannerConfig,
) -> Result<Vec<TrajectoryPoint>, SynthError> {
    config.check()?;
    if !start.is_finite() || !end.is_finite() {
        return Err(SynthError::InvalidArgument("boundary state has a non-finite component".into()));
    }
    let plan = QuinticPlan::new(start, end, config.duration());
    let start_velocity = Vec2::new(start.vx, start.vy);
    let end_velocity = Vec2::new(end.vx, end.vy);
    let chord = Vec2::new(end.x - start.x, end.y - start.y);
    let mut heading = [start_velocity, end_velocity, chord]
        .into_iter()
        .find(|v| v.norm() >= HEADING_SPEED_FLOOR)
        .map_or(0.0, Vec2::angle);
    Ok((1..=config.steps)
        .map(|k| {
            let t = k as f64 * config.dt;
            let p = plan.position(t);
            let v = plan.velocity(t);
            let speed = v.norm();
            if speed >= HEADING_SPEED_FLOOR {
                heading = v.angle();
            }
            TrajectoryPoint::new(t, p.x, p.y, normalize_angle(heading), speed)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Speed,
    LongAccel,
    LatAccel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub kind: ViolationKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

/// Flags speed, longitudinal and lateral acceleration limit violations. Acceleration
/// estimates exist at interior samples and are reported at their sample index.
pub fn check_feasibility(
    trajectory: &[TrajectoryPoint],
    config: &PlannerConfig,
) -> Result<FeasibilityReport, SynthError> {
    if trajectory.len() < 3 {
        return Err(SynthError::InvalidArgument(format!("need at least 3 points, got {}", trajectory.len())));
    }
    let lon = longitudinal_accelerations(trajectory).map_err(|e| SynthError::InvalidArgument(e.to_string()))?;
    let lat = lateral_accelerations(trajectory).map_err(|e| SynthError::InvalidArgument(e.to_string()))?;
    let mut violations = Vec::new();
    for (k, p) in trajectory.iter().enumerate() {
        if p.speed > config.v_max {
            violations.push(Violation { step: k, kind: ViolationKind::Speed, value: p.speed });
        }
        if k == 0 || k + 1 == trajectory.len() {
            continue;
        }
        if lon[k - 1].abs() > config.a_long_max {
            violations.push(Violation { step: k, kind: ViolationKind::LongAccel, value: lon[k - 1] });
        }
        if lat[k - 1].abs() > config.a_lat_max {
            violations.push(Violation { step: k, kind: ViolationKind::LatAccel, value: lat[k - 1] });
        }
    }
    Ok(FeasibilityReport { ok: violations.is_empty(), violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_boundaries_give_a_constant_plan() {
        let s = BoundaryState::new(Vec2::new(3.0, -2.0), Vec2::ZERO, Vec2::ZERO);
        let traj = plan_quintic(&s, &s, &PlannerConfig::default()).unwrap();
        assert_eq!(traj.len(), 80);
        assert!(traj.iter().all(|p| p.x == 3.0 && p.y == -2.0 && p.speed == 0.0));
    }

    #[test]
    fn matching_constant_velocity_is_linear() {
        let s = BoundaryState::new(Vec2::ZERO, Vec2::new(10.0, 0.0), Vec2::ZERO);
        let e = BoundaryState::new(Vec2::new(80.0, 0.0), Vec2::new(10.0, 0.0), Vec2::ZERO);
        let traj = plan_quintic(&s, &e, &PlannerConfig::default()).unwrap();
        for p in &traj {
            assert!((p.x - 10.0 * p.t).abs() < 1e-9, "{p:?}");
            assert!(p.y.abs() < 1e-12);
        }
        assert!((traj.last().unwrap().t - 8.0).abs() < 1e-12);
    }

    #[test]
    fn arc_exceeds_lateral_limit() {
        let (v, r, dt) = (10.0, 10.0, 0.05);
        let traj: Vec<TrajectoryPoint> = (0..20)
            .map(|k| {
                let th = v / r * k as f64 * dt;
                TrajectoryPoint::new(k as f64 * dt, r * th.sin(), r - r * th.cos(), normalize_angle(th), v)
            })
            .collect();
        let report = check_feasibility(&traj, &PlannerConfig::default()).unwrap();
        assert!(!report.ok);
        let lat = report.violations.iter().find(|v| v.kind == ViolationKind::LatAccel).unwrap();
        assert!((lat.value - 10.0).abs() < 0.05);
    }

    #[test]
    fn straight_cruise_is_feasible() {
        let traj: Vec<TrajectoryPoint> =
            (0..30).map(|k| TrajectoryPoint::new(k as f64 * 0.1, k as f64, 0.0, 0.0, 10.0)).collect();
        assert!(check_feasibility(&traj, &PlannerConfig::default()).unwrap().ok);
        assert!(check_feasibility(&traj[..2], &PlannerConfig::default()).is_err());
    }

    #[test]
    fn non_finite_boundary_is_rejected() {
        let s = BoundaryState::new(Vec2::new(f64::NAN, 0.0), Vec2::ZERO, Vec2::ZERO);
        assert!(plan_quintic(&s, &s, &PlannerConfig::default()).is_err());
    }
}
