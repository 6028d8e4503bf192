//! Deterministic 2-D scenario simulator.
//!
//! Static walls and discs, constant-speed waypoint walkers, an ideal
//! kinematic robot and a planar range sensor. One [`World`] is single-flow;
//! independent instances can be stepped concurrently.

mod history;
mod scenario;
mod sensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use history::ObstacleHistory;
pub use scenario::{
    builtin_names, Bounds, DiscSpec, Randomization, ScenarioConfig, WalkerSpec, WallSpec,
    EVALUATION_SCENARIOS,
};
pub use sensor::{ScanResult, SensorConfig};

use crate::dynamics::{arc_endpoint, Pose, RobotLimits, VelocityPair};
use crate::geometry::{distance_to_segment, Point2};

/// Default goal tolerance (m).
pub const GOAL_RADIUS: f64 = 0.3;
/// Default collision distance between the robot centre and an obstacle surface (m).
pub const COLLISION_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Disc { center: Point2, radius: f64 },
    Segment { a: Point2, b: Point2 },
}

impl Shape {
    /// Distance from `p` to the boundary of the shape (zero inside a disc).
    pub fn surface_distance(&self, p: Point2) -> f64 {
        match *self {
            Shape::Disc { center, radius } => (p.distance(center) - radius).max(0.0),
            Shape::Segment { a, b } => distance_to_segment(p, a, b),
        }
    }
}

/// A polyline walked at constant speed, either as a closed cycle or back and forth.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkerPath {
    vertices: Vec<Point2>,
    cumulative: Vec<f64>,
    looped: bool,
}

impl WalkerPath {
    pub fn new(waypoints: &[Point2], looped: bool) -> Self {
        assert!(!waypoints.is_empty(), "walker path needs waypoints");
        let mut vertices = waypoints.to_vec();
        if looped && vertices.len() > 1 {
            vertices.push(vertices[0]);
        }
        let mut cumulative = vec![0.0];
        for w in vertices.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + w[0].distance(w[1]));
        }
        Self {
            vertices,
            cumulative,
            looped,
        }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Length of one full motion cycle.
    pub fn period(&self) -> f64 {
        if self.looped {
            self.length()
        } else {
            2.0 * self.length()
        }
    }

    /// Arc-length position along the polyline and direction sign for a cycle phase.
    fn unfold(&self, phase: f64) -> (f64, f64) {
        let len = self.length();
        if self.looped || phase <= len {
            (phase, 1.0)
        } else {
            (2.0 * len - phase, -1.0)
        }
    }

    fn segment_at(&self, s: f64, direction: f64) -> usize {
        let last = self.vertices.len() - 2;
        let idx = self.cumulative.partition_point(|&c| c <= s).saturating_sub(1).min(last);
        // at a vertex, walking backwards uses the segment that ends there
        if direction < 0.0 && idx > 0 && s <= self.cumulative[idx] {
            idx - 1
        } else {
            idx
        }
    }

    pub fn position(&self, phase: f64) -> Point2 {
        if self.vertices.len() == 1 || self.length() == 0.0 {
            return self.vertices[0];
        }
        let (s, dir) = self.unfold(phase);
        let i = self.segment_at(s, dir);
        let (a, b) = (self.vertices[i], self.vertices[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        if seg == 0.0 {
            return a;
        }
        let t = ((s - self.cumulative[i]) / seg).clamp(0.0, 1.0);
        a + (b - a) * t
    }

    /// Unit direction of travel at the given phase (zero for a degenerate path).
    pub fn direction(&self, phase: f64) -> Point2 {
        if self.vertices.len() == 1 || self.length() == 0.0 {
            return Point2::ZERO;
        }
        let (s, dir) = self.unfold(phase);
        let i = self.segment_at(s, dir);
        let seg = self.vertices[i + 1] - self.vertices[i];
        let n = seg.norm();
        if n == 0.0 {
            Point2::ZERO
        } else {
            seg * (dir / n)
        }
    }

    /// Distance from `p` to the polyline.
    pub fn distance_to(&self, p: Point2) -> f64 {
        if self.vertices.len() == 1 {
            return p.distance(self.vertices[0]);
        }
        self.vertices
            .windows(2)
            .map(|w| distance_to_segment(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn advance(&self, phase: f64, distance: f64) -> f64 {
        let period = self.period();
        if period == 0.0 {
            0.0
        } else {
            (phase + distance).rem_euclid(period)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    Static,
    Walker {
        path: WalkerPath,
        speed: f64,
        phase: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub shape: Shape,
    pub motion: Motion,
}

impl Obstacle {
    pub fn is_dynamic(&self) -> bool {
        matches!(self.motion, Motion::Walker { speed, .. } if speed > 0.0)
    }

    /// Ground-truth velocity (zero for static obstacles).
    pub fn velocity(&self) -> Point2 {
        match &self.motion {
            Motion::Static => Point2::ZERO,
            Motion::Walker { path, speed, phase } => path.direction(*phase) * *speed,
        }
    }

    /// Reference position: disc centre, or segment midpoint.
    pub fn position(&self) -> Point2 {
        match self.shape {
            Shape::Disc { center, .. } => center,
            Shape::Segment { a, b } => (a + b) * 0.5,
        }
    }

    fn advance(&mut self, dt: f64) {
        if let Motion::Walker { path, speed, phase } = &mut self.motion {
            *phase = path.advance(*phase, *speed * dt);
            if let Shape::Disc { center, .. } = &mut self.shape {
                *center = path.position(*phase);
            }
        }
    }
}

/// Ground-truth state of a disc obstacle, as consumed by the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSnapshot {
    pub position: Point2,
    pub velocity: Point2,
    pub radius: f64,
}

/// Flags produced by one simulation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepFlags {
    pub collision: bool,
    pub goal_reached: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldOptions {
    pub goal_radius: f64,
    pub collision_radius: f64,
    pub sensor: SensorConfig,
}

impl Default for WorldOptions {
    fn default() -> Self {
        Self {
            goal_radius: GOAL_RADIUS,
            collision_radius: COLLISION_RADIUS,
            sensor: SensorConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub robot: Pose,
    /// Last executed command.
    pub velocity: VelocityPair,
    pub goal: Point2,
    pub obstacles: Vec<Obstacle>,
    pub limits: RobotLimits,
    pub options: WorldOptions,
    /// Number of steps taken so far.
    pub step_index: u64,
    rng: ChaCha8Rng,
}

impl World {
    /// A world with explicit contents, robot at rest.
    pub fn new(
        robot: Pose,
        goal: Point2,
        obstacles: Vec<Obstacle>,
        limits: RobotLimits,
        options: WorldOptions,
        seed: u64,
    ) -> Self {
        Self {
            robot,
            velocity: VelocityPair::STOP,
            goal,
            obstacles,
            limits,
            options,
            step_index: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Instantiates one trial of a scenario. The seed fully determines the
    /// randomized obstacle starts, walker phases, goal and start heading.
    pub fn from_scenario(
        cfg: &ScenarioConfig,
        trial_seed: u64,
        limits: RobotLimits,
        options: WorldOptions,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let r = cfg.randomization;
        let jitter = |rng: &mut ChaCha8Rng, range: f64| -> Point2 {
            if range > 0.0 {
                Point2::new(rng.random_range(-range..=range), rng.random_range(-range..=range))
            } else {
                Point2::ZERO
            }
        };

        let mut start = cfg.start;
        if r.start_heading_jitter > 0.0 {
            start = Pose::new(
                start.x,
                start.y,
                start.theta + rng.random_range(-r.start_heading_jitter..=r.start_heading_jitter),
            );
        }
        let goal = cfg.goal + jitter(&mut rng, r.goal_jitter);

        // randomized obstacles keep clear of the start and the goal
        let keep_out = options.collision_radius + 0.3;
        let clear = |center: Point2, radius: f64| {
            center.distance(start.position()) - radius > keep_out
                && center.distance(goal) - radius > keep_out
        };

        let mut obstacles = Vec::new();
        for w in &cfg.walls {
            obstacles.push(Obstacle {
                shape: Shape::Segment { a: w.a, b: w.b },
                motion: Motion::Static,
            });
        }
        for d in &cfg.discs {
            let mut center = d.center;
            for _ in 0..32 {
                let c = d.center + jitter(&mut rng, r.obstacle_jitter);
                if clear(c, d.radius) {
                    center = c;
                    break;
                }
            }
            obstacles.push(Obstacle {
                shape: Shape::Disc {
                    center,
                    radius: d.radius,
                },
                motion: Motion::Static,
            });
        }
        for w in &cfg.walkers {
            let mut result = None;
            for _ in 0..32 {
                let offset = jitter(&mut rng, r.obstacle_jitter);
                let pts: Vec<Point2> = w.waypoints.iter().map(|&p| p + offset).collect();
                let path = WalkerPath::new(&pts, w.looped);
                let phase = if r.walker_phase && path.period() > 0.0 {
                    rng.random_range(0.0..path.period())
                } else {
                    0.0
                };
                let center = path.position(phase);
                let ok = clear(center, w.radius);
                result = Some((path, phase, center));
                if ok {
                    break;
                }
            }
            let (path, phase, center) = result.expect("at least one attempt");
            obstacles.push(Obstacle {
                shape: Shape::Disc {
                    center,
                    radius: w.radius,
                },
                motion: Motion::Walker {
                    path,
                    speed: w.speed,
                    phase,
                },
            });
        }

        let sensor_seed = rng.random();
        Self::new(start, goal, obstacles, limits, options, sensor_seed)
    }

    /// Distance from the robot centre to the nearest obstacle surface.
    pub fn clearance(&self) -> f64 {
        let p = self.robot.position();
        self.obstacles
            .iter()
            .map(|o| o.shape.surface_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn flags(&self) -> StepFlags {
        StepFlags {
            collision: self.clearance() < self.options.collision_radius,
            goal_reached: self.robot.position().distance(self.goal) < self.options.goal_radius,
        }
    }

    /// Advances walkers and the robot by one control period under `cmd`.
    pub fn step(&mut self, cmd: VelocityPair) -> StepFlags {
        self.step_with_dt(cmd, self.limits.dt)
    }

    pub fn step_with_dt(&mut self, cmd: VelocityPair, dt: f64) -> StepFlags {
        assert!(dt > 0.0, "step duration must be positive");
        for o in &mut self.obstacles {
            o.advance(dt);
        }
        self.robot = arc_endpoint(self.robot, cmd, dt);
        self.velocity = cmd;
        self.step_index += 1;
        self.flags()
    }

    /// Ray-casts the configured range sensor from the current robot pose.
    pub fn sense(&mut self) -> ScanResult {
        let cfg = self.options.sensor;
        sensor::cast(self, cfg, self.step_index)
    }

    /// Ground-truth snapshots of all disc obstacles.
    pub fn disc_snapshots(&self) -> Vec<ObstacleSnapshot> {
        self.obstacles
            .iter()
            .filter_map(|o| match o.shape {
                Shape::Disc { center, radius } => Some(ObstacleSnapshot {
                    position: center,
                    velocity: o.velocity(),
                    radius,
                }),
                Shape::Segment { .. } => None,
            })
            .collect()
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
