//! Differential-drive kinematics, dynamic windows and arc rollouts.
//!
//! A constant `(v, ω)` command moves the robot along a circular arc of radius
//! `v / ω` (a straight line when `ω = 0`). The dynamic window is the box of
//! commands reachable from the current command within one control period.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Number of poses sampled along an arc when measuring obstacle distance.
pub const DEFAULT_ARC_SAMPLES: usize = 10;

/// Tolerance used by window-membership checks.
pub const WINDOW_EPS: f64 = 1e-9;

/// Velocity caps, acceleration limits, footprint and control period of the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotLimits {
    pub v_min: f64,
    pub v_max: f64,
    pub w_min: f64,
    pub w_max: f64,
    /// Linear acceleration limit (m/s²), also used as braking limit.
    pub v_accel: f64,
    /// Angular acceleration limit (rad/s²), also used as braking limit.
    pub w_accel: f64,
    /// Robot radius (m).
    pub radius: f64,
    /// Control period (s).
    pub dt: f64,
}

impl Default for RobotLimits {
    /// Turtlebot2-like limits. The radius equals the collision distance used by
    /// the simulator, so `c_col` obstacle costs mark exactly the colliding arcs.
    #[allow(clippy::approx_constant)]
    fn default() -> Self {
        Self {
            v_min: 0.0,
            v_max: 0.65,
            w_min: -3.14,
            w_max: 3.14,
            v_accel: 0.5,
            w_accel: 2.0,
            radius: 0.5,
            dt: 0.2,
        }
    }
}

impl RobotLimits {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.v_min,
            self.v_max,
            self.w_min,
            self.w_max,
            self.v_accel,
            self.w_accel,
            self.radius,
            self.dt,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("robot limits must be finite".into()));
        }
        if self.v_min > self.v_max {
            return Err(Error::Config("v_min must not exceed v_max".into()));
        }
        if self.w_min >= self.w_max {
            return Err(Error::Config("w_min must be below w_max".into()));
        }
        if self.v_accel <= 0.0 || self.w_accel <= 0.0 {
            return Err(Error::Config("acceleration limits must be positive".into()));
        }
        if self.radius <= 0.0 || self.dt <= 0.0 {
            return Err(Error::Config("radius and dt must be positive".into()));
        }
        Ok(())
    }

    /// The box of all commands allowed by the absolute caps.
    pub fn caps(&self) -> VelocityWindow {
        VelocityWindow {
            lin: Interval::new(self.v_min, self.v_max),
            ang: Interval::new(self.w_min, self.w_max),
        }
    }

    pub fn clamp(&self, cmd: VelocityPair) -> VelocityPair {
        VelocityPair::new(
            cmd.v.clamp(self.v_min, self.v_max),
            cmd.w.clamp(self.w_min, self.w_max),
        )
    }
}

/// Robot pose in the odometry frame. `theta` is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Point2 {
        Point2::from_angle(self.theta)
    }
}

/// One `(v, ω)` command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityPair {
    pub v: f64,
    pub w: f64,
}

impl VelocityPair {
    pub const STOP: VelocityPair = VelocityPair { v: 0.0, w: 0.0 };

    pub const fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.w.is_finite()
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64, eps: f64) -> bool {
        x >= self.lo - eps && x <= self.hi + eps
    }

    /// `k` evenly spaced values, both endpoints included exactly.
    pub fn linspace(&self, k: usize) -> Vec<f64> {
        assert!(k >= 2, "discretization needs at least two values per axis");
        let step = self.width() / (k - 1) as f64;
        (0..k)
            .map(|i| if i + 1 == k { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }

    fn around(center: f64, half_width: f64, min: f64, max: f64) -> Self {
        let lo = (center - half_width).max(min).min(max);
        let hi = (center + half_width).min(max).max(lo);
        Self { lo, hi }
    }
}

/// Box of commands reachable within one control period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityWindow {
    pub lin: Interval,
    pub ang: Interval,
}

impl VelocityWindow {
    pub fn contains(&self, cmd: VelocityPair, eps: f64) -> bool {
        self.lin.contains(cmd.v, eps) && self.ang.contains(cmd.w, eps)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// `sin(h) / h`, evaluated without cancellation near zero.
fn sinc(h: f64) -> f64 {
    if h.abs() < 1e-4 {
        1.0 - h * h / 6.0
    } else {
        h.sin() / h
    }
}

/// Pose reached after following `cmd` for `t` seconds.
///
/// Uses the half-angle form of the arc equations, which is exact for every
/// `ω` including the straight-line limit.
pub fn arc_endpoint(pose: Pose, cmd: VelocityPair, t: f64) -> Pose {
    let half = 0.5 * cmd.w * t;
    let chord = cmd.v * t * sinc(half);
    let mid = pose.theta + half;
    Pose::new(
        pose.x + chord * mid.cos(),
        pose.y + chord * mid.sin(),
        pose.theta + cmd.w * t,
    )
}

/// `samples` poses evenly spaced in time over `[0, duration]`, start and end included.
pub fn rollout_arc(pose: Pose, cmd: VelocityPair, duration: f64, samples: usize) -> Vec<Pose> {
    assert!(samples >= 2, "an arc rollout needs at least two samples");
    assert!(duration > 0.0, "rollout duration must be positive");
    (0..samples)
        .map(|i| {
            let t = if i + 1 == samples {
                duration
            } else {
                duration * i as f64 / (samples - 1) as f64
            };
            arc_endpoint(pose, cmd, t)
        })
        .collect()
}

/// The dynamic window around `current`, intersected with the absolute caps.
pub fn feasible_window(current: VelocityPair, limits: &RobotLimits) -> VelocityWindow {
    VelocityWindow {
        lin: Interval::around(current.v, limits.v_accel * limits.dt, limits.v_min, limits.v_max),
        ang: Interval::around(current.w, limits.w_accel * limits.dt, limits.w_min, limits.w_max),
    }
}

/// Cartesian product of `k` values per axis, linear velocity outer, angular inner.
pub fn discretize_window(window: &VelocityWindow, k: usize) -> Vec<VelocityPair> {
    let lin = window.lin.linspace(k);
    let ang = window.ang.linspace(k);
    lin.iter()
        .flat_map(|&v| ang.iter().map(move |&w| VelocityPair::new(v, w)))
        .collect()
}

/// Minimum distance from any of `samples` poses along the arc to any point.
/// Returns `f64::INFINITY` when there are no points.
pub fn dist_along_arc(
    pose: Pose,
    cmd: VelocityPair,
    points: &[Point2],
    duration: f64,
    samples: usize,
) -> f64 {
    if points.is_empty() {
        return f64::INFINITY;
    }
    rollout_arc(pose, cmd, duration, samples)
        .iter()
        .map(|p| {
            let c = p.position();
            points
                .iter()
                .map(|&o| {
                    let d = o - c;
                    d.dot(d)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Distance to the nearest obstacle point along the arc simulated for one control period.
pub fn dist_to_obstacles(
    pose: Pose,
    cmd: VelocityPair,
    points: &[Point2],
    limits: &RobotLimits,
) -> f64 {
    dist_along_arc(pose, cmd, points, limits.dt, DEFAULT_ARC_SAMPLES)
}

/// Whether the robot can brake to a stop within `distance` using the braking limits.
pub fn admissible(cmd: VelocityPair, distance: f64, limits: &RobotLimits) -> bool {
    let d = distance.max(0.0);
    cmd.v <= (2.0 * d * limits.v_accel).sqrt() && cmd.w.abs() <= (2.0 * d * limits.w_accel).sqrt()
}

/// Whether `cmd` is reachable from `previous` within one control period.
pub fn respects_dynamics(previous: VelocityPair, cmd: VelocityPair, limits: &RobotLimits) -> bool {
    feasible_window(previous, limits).contains(cmd, WINDOW_EPS)
}
