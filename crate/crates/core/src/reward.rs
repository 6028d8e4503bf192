//! Shaped navigation reward.
//!
//! Per step the robot collects goal progress (or the goal bonus), the
//! collision penalty, a steering term that punishes standing in front of a
//! moving obstacle (red zone) and rewards being behind it (green zone), and a
//! danger term inversely proportional to the distance to every obstacle in
//! sensor range.

use serde::{Deserialize, Serialize};

use crate::dynamics::Pose;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::world::{ObstacleSnapshot, ScanResult};

/// Speeds below this count as static.
pub const STATIC_SPEED: f64 = 1e-6;

/// Where obstacle velocities for the zone test come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocitySource {
    /// Simulator ground truth.
    #[default]
    GroundTruth,
    /// Finite differences of clustered scan points across consecutive scans.
    ScanEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub r_goal: f64,
    pub r_collision: f64,
    pub r_proximity: f64,
    pub r_spatial: f64,
    pub r_danger: f64,
    pub progress_gain: f64,
    pub goal_radius: f64,
    pub collision_radius: f64,
    /// Obstacles farther than this get no steering term.
    pub activation_radius: f64,
    /// Obstacles farther than this get no danger term.
    pub sensor_range: f64,
    /// Include the `+|b_t| r_spatial` green-zone term.
    pub positive_reinforcement: bool,
    pub velocity_source: VelocitySource,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_goal: 2000.0,
            r_collision: -2000.0,
            r_proximity: 10.0,
            r_spatial: 25.0,
            r_danger: 30.0,
            progress_gain: 2.5,
            goal_radius: crate::world::GOAL_RADIUS,
            collision_radius: crate::world::COLLISION_RADIUS,
            activation_radius: 2.0,
            sensor_range: 4.0,
            positive_reinforcement: true,
            velocity_source: VelocitySource::GroundTruth,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let magnitudes = [
            self.r_goal,
            -self.r_collision,
            self.goal_radius,
            self.collision_radius,
            self.activation_radius,
            self.sensor_range,
        ];
        if magnitudes.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Config(
                "reward magnitudes and radii must be positive (r_collision negative)".into(),
            ));
        }
        // shaping terms may be switched off with 0
        let shaping = [self.r_proximity, self.r_spatial, self.r_danger, self.progress_gain];
        if shaping.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::Config("shaping reward weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Zone {
    /// Ahead of a moving obstacle.
    Red,
    /// Behind a moving obstacle.
    Green,
    /// Static, out of range, or exactly abeam.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneAssessment {
    /// Robot-obstacle distance.
    pub d_t: f64,
    /// Signed offset of the robot along the obstacle's heading.
    pub b_t: f64,
    pub zone: Zone,
}

/// Zone of the robot relative to one obstacle. `b_t` is the projection of the
/// robot's offset onto the obstacle's direction of motion.
pub fn classify_zone(
    p_rob: Point2,
    p_obs: Point2,
    v_obs: Point2,
    cfg: &RewardConfig,
) -> ZoneAssessment {
    let offset = p_rob - p_obs;
    let d_t = offset.norm();
    let speed = v_obs.norm();
    if speed < STATIC_SPEED {
        return ZoneAssessment {
            d_t,
            b_t: 0.0,
            zone: Zone::None,
        };
    }
    let b_t = offset.dot(v_obs * (1.0 / speed));
    let zone = if d_t >= cfg.activation_radius || b_t == 0.0 {
        Zone::None
    } else if b_t > 0.0 {
        Zone::Red
    } else {
        Zone::Green
    };
    ZoneAssessment { d_t, b_t, zone }
}

pub fn steering_reward(assessments: &[ZoneAssessment], cfg: &RewardConfig) -> f64 {
    assessments
        .iter()
        .map(|a| match a.zone {
            Zone::Red => -a.b_t.abs() * cfg.r_spatial - cfg.r_proximity / a.d_t,
            Zone::Green if cfg.positive_reinforcement => a.b_t.abs() * cfg.r_spatial,
            Zone::Green | Zone::None => 0.0,
        })
        .sum()
}

/// Per-term reward for one step. `total` is the sum of the other fields.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub goal: f64,
    pub collision: f64,
    pub steering: f64,
    pub danger: f64,
    pub total: f64,
}

/// `assessments` must cover every obstacle within sensor range.
pub fn step_reward(
    prev_pose: Pose,
    new_pose: Pose,
    goal: Point2,
    assessments: &[ZoneAssessment],
    collision: bool,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let new_dist = new_pose.position().distance(goal);
    let prev_dist = prev_pose.position().distance(goal);
    let goal_term = if new_dist < cfg.goal_radius {
        cfg.r_goal
    } else {
        -cfg.progress_gain * (new_dist - prev_dist)
    };
    let collision_term = if collision { cfg.r_collision } else { 0.0 };
    let steering = steering_reward(assessments, cfg);
    let danger = -assessments
        .iter()
        .filter(|a| a.d_t <= cfg.sensor_range)
        .map(|a| cfg.r_danger / a.d_t)
        .sum::<f64>();
    RewardBreakdown {
        goal: goal_term,
        collision: collision_term,
        steering,
        danger,
        total: goal_term + collision_term + steering + danger,
    }
}

/// Zone assessments for every obstacle within sensor range of `p_rob`.
pub fn assess_obstacles(
    p_rob: Point2,
    obstacles: &[ObstacleSnapshot],
    cfg: &RewardConfig,
) -> Vec<ZoneAssessment> {
    obstacles
        .iter()
        .filter(|o| o.position.distance(p_rob) <= cfg.sensor_range)
        .map(|o| classify_zone(p_rob, o.position, o.velocity, cfg))
        .collect()
}

/// Time derivative of the robot-obstacle distance for constant velocities.
pub fn check_prop1(p_rob: Point2, v_rob: Point2, p_obs: Point2, v_obs: Point2) -> Result<f64> {
    let dp = p_rob - p_obs;
    let d = dp.norm();
    if d == 0.0 {
        return Err(Error::ZeroDistance);
    }
    Ok(dp.dot(v_rob - v_obs) / d)
}

/// Groups scan points into clusters separated by gaps larger than `gap`.
pub fn cluster_points(points: &[Point2], gap: f64) -> Vec<Vec<Point2>> {
    let mut clusters: Vec<Vec<Point2>> = Vec::new();
    for &p in points {
        match clusters.last_mut() {
            Some(c) if c.last().is_some_and(|q| q.distance(p) <= gap) => c.push(p),
            _ => clusters.push(vec![p]),
        }
    }
    // the sweep wraps around, so the first and last clusters may be one object
    if clusters.len() > 1 {
        let first = clusters[0][0];
        let last = *clusters.last().unwrap().last().unwrap();
        if first.distance(last) <= gap {
            let tail = clusters.pop().unwrap();
            clusters[0].splice(0..0, tail);
        }
    }
    clusters
}

fn centroid(points: &[Point2]) -> Point2 {
    let sum = points.iter().fold(Point2::ZERO, |acc, &p| acc + p);
    sum * (1.0 / points.len() as f64)
}

/// Estimates obstacle positions and velocities from two consecutive scans by
/// clustering each scan and matching cluster centroids within `gate` metres.
pub fn estimate_obstacles(
    previous: &ScanResult,
    current: &ScanResult,
    dt: f64,
    cluster_gap: f64,
    gate: f64,
) -> Vec<ObstacleSnapshot> {
    let prev: Vec<Point2> = cluster_points(&previous.points, cluster_gap)
        .iter()
        .map(|c| centroid(c))
        .collect();
    cluster_points(&current.points, cluster_gap)
        .iter()
        .map(|c| {
            let position = centroid(c);
            let matched = prev
                .iter()
                .map(|&q| (q.distance(position), q))
                .filter(|(d, _)| *d <= gate)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let velocity = match matched {
                Some((_, q)) if dt > 0.0 => (position - q) * (1.0 / dt),
                _ => Point2::ZERO,
            };
            ObstacleSnapshot {
                position,
                velocity,
                radius: 0.0,
            }
        })
        .collect()
}
