//! Classic dynamic window planner.
//!
//! Every command of the discretized dynamic window is rolled out over a short
//! horizon, filtered by the braking-distance admissibility test and scored by
//! a weighted sum of goal heading, obstacle clearance and forward speed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    admissible, arc_endpoint, discretize_window, dist_along_arc, feasible_window, wrap_angle,
    Pose, RobotLimits, VelocityPair,
};
use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DwaConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Post-sum scaling applied to the objective.
    pub smoothing: f64,
    pub k: usize,
    /// Rollout horizon for heading and clearance (s).
    pub horizon: f64,
    pub arc_samples: usize,
    /// Clearance above which the distance term saturates (m).
    pub clearance_cap: f64,
}

impl Default for DwaConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.1,
            gamma: 0.1,
            smoothing: 1.0,
            k: 10,
            horizon: 1.0,
            arc_samples: 10,
            clearance_cap: 2.0,
        }
    }
}

impl DwaConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|x| !(*x >= 0.0)) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::Config("DWA weights must be non-negative and not all zero".into()));
        }
        if !(self.smoothing > 0.0) {
            return Err(Error::Config("DWA smoothing scale must be positive".into()));
        }
        if self.k < 2 || self.arc_samples < 2 {
            return Err(Error::Config("DWA k and arc_samples must be at least 2".into()));
        }
        if !(self.horizon > 0.0) || !(self.clearance_cap > 0.0) {
            return Err(Error::Config("DWA horizon and clearance cap must be positive".into()));
        }
        Ok(())
    }
}

/// `1 - |heading error| / π` at the end of the rollout: 1 when the endpoint
/// faces the goal, 0 when it faces directly away.
pub fn heading_score(pose: Pose, cmd: VelocityPair, goal: Point2, duration: f64) -> f64 {
    let end = arc_endpoint(pose, cmd, duration);
    let to_goal = goal - end.position();
    let bearing = to_goal.y.atan2(to_goal.x);
    1.0 - wrap_angle(bearing - end.theta).abs() / PI
}

/// Score components of one candidate command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub cmd: VelocityPair,
    pub heading: f64,
    /// Free distance along the arc beyond the robot radius (m).
    pub clearance: f64,
    pub admissible: bool,
    pub score: f64,
}

pub fn evaluate(
    pose: Pose,
    current: VelocityPair,
    points: &[Point2],
    goal: Point2,
    limits: &RobotLimits,
    cfg: &DwaConfig,
) -> Vec<Candidate> {
    let window = feasible_window(current, limits);
    discretize_window(&window, cfg.k)
        .into_iter()
        .map(|cmd| {
            let dist = dist_along_arc(pose, cmd, points, cfg.horizon, cfg.arc_samples);
            let clearance = (dist - limits.radius).max(0.0);
            let heading = heading_score(pose, cmd, goal, cfg.horizon);
            let dist_term = clearance.min(cfg.clearance_cap) / cfg.clearance_cap;
            let vel_term = if limits.v_max > 0.0 { cmd.v / limits.v_max } else { 0.0 };
            let score =
                cfg.smoothing * (cfg.alpha * heading + cfg.beta * dist_term + cfg.gamma * vel_term);
            Candidate {
                cmd,
                heading,
                clearance,
                admissible: admissible(cmd, clearance, limits),
                score,
            }
        })
        .collect()
}

/// Highest-scoring admissible command. Ties go to the lower `|ω|`, then the
/// lower index. With no admissible command the robot brakes as hard as the
/// window allows.
pub fn plan(
    pose: Pose,
    current: VelocityPair,
    points: &[Point2],
    goal: Point2,
    limits: &RobotLimits,
    cfg: &DwaConfig,
) -> VelocityPair {
    let candidates = evaluate(pose, current, points, goal, limits, cfg);
    let mut best: Option<&Candidate> = None;
    for c in candidates.iter().filter(|c| c.admissible) {
        best = match best {
            None => Some(c),
            Some(b) if c.score > b.score || (c.score == b.score && c.cmd.w.abs() < b.cmd.w.abs()) => Some(c),
            keep => keep,
        };
    }
    match best {
        Some(c) => c.cmd,
        None => emergency_stop(current, limits),
    }
}

/// The window command closest to standing still.
pub fn emergency_stop(current: VelocityPair, limits: &RobotLimits) -> VelocityPair {
    let w = feasible_window(current, limits);
    VelocityPair::new(0.0f64.clamp(w.lin.lo, w.lin.hi), 0.0f64.clamp(w.ang.lo, w.ang.hi))
}
