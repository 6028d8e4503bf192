use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Shape, World};
use crate::dynamics::Pose;
use crate::geometry::{ray_circle, ray_segment, Point2};

/// Planar range sensor sweeping the full circle, beam 0 along the robot heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub beams: usize,
    pub max_range: f64,
    /// Standard deviation of additive Gaussian range noise (m).
    pub noise_std: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            beams: 180,
            max_range: 4.0,
            noise_std: 0.0,
        }
    }
}

/// Obstacle points sensed at one time step, in the odometry frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub timestamp: u64,
    /// Robot pose when the scan was taken.
    pub pose: Pose,
    pub points: Vec<Point2>,
}

pub(super) fn cast(world: &mut World, cfg: SensorConfig, timestamp: u64) -> ScanResult {
    assert!(cfg.beams >= 1, "sensor needs at least one beam");
    let pose = world.robot;
    let origin = pose.position();
    let noise = (cfg.noise_std > 0.0).then(|| Normal::new(0.0, cfg.noise_std).expect("valid std"));
    let mut points = Vec::new();
    for i in 0..cfg.beams {
        let angle = pose.theta + 2.0 * PI * i as f64 / cfg.beams as f64;
        let dir = Point2::from_angle(angle);
        let hit = world
            .obstacles
            .iter()
            .filter_map(|o| match o.shape {
                Shape::Disc { center, radius } => ray_circle(origin, dir, center, radius),
                Shape::Segment { a, b } => ray_segment(origin, dir, a, b),
            })
            .fold(f64::INFINITY, f64::min);
        if hit <= cfg.max_range {
            let range = match &noise {
                Some(n) => (hit + n.sample(world.rng())).clamp(0.0, cfg.max_range),
                None => hit,
            };
            points.push(origin + dir * range);
        }
    }
    ScanResult {
        timestamp,
        pose,
        points,
    }
}
