//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "sparse-dynamic"
//! goal = [12.0, 0.0]
//! start = { x = 0.0, y = 0.0, theta = 0.0 }
//! bounds = { min = [-1.0, -3.0], max = [13.0, 3.0] }
//! seed = 0
//!
//! [randomization]
//! obstacle_jitter = 1.0      # uniform ±m applied to disc centres and walker paths
//! walker_phase = true        # start walkers at a random point of their cycle
//! goal_jitter = 0.0          # uniform ±m on each goal coordinate
//! start_heading_jitter = 0.0 # uniform ±rad on the start heading
//!
//! [[walls]]
//! a = [-1.0, 3.0]
//! b = [13.0, 3.0]
//!
//! [[discs]]
//! center = [4.0, 1.0]
//! radius = 0.3
//!
//! [[walkers]]
//! waypoints = [[3.0, -2.5], [3.0, 2.5]]
//! speed = 0.6
//! radius = 0.25
//! loop = false               # false: walk back and forth; true: closed cycle
//! ```
//!
//! Optional `[robot]` and `[reward]` tables override individual fields of
//! [`RobotLimits`] and [`RewardConfig`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Pose, RobotLimits};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::reward::RewardConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point2,
    pub max: Point2,
}

impl Bounds {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub a: Point2,
    pub b: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscSpec {
    pub center: Point2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerSpec {
    pub waypoints: Vec<Point2>,
    pub speed: f64,
    pub radius: f64,
    #[serde(rename = "loop", default)]
    pub looped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Randomization {
    pub obstacle_jitter: f64,
    pub walker_phase: bool,
    pub goal_jitter: f64,
    pub start_heading_jitter: f64,
}

impl Default for Randomization {
    fn default() -> Self {
        Self {
            obstacle_jitter: 1.0,
            walker_phase: true,
            goal_jitter: 0.0,
            start_heading_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub start: Pose,
    pub goal: Point2,
    pub bounds: Bounds,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub randomization: Randomization,
    #[serde(default)]
    pub walls: Vec<WallSpec>,
    #[serde(default)]
    pub discs: Vec<DiscSpec>,
    #[serde(default)]
    pub walkers: Vec<WalkerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<RobotLimits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardConfig>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("scenario `{}`: {m}", self.name)));
        if !self.bounds.contains(self.start.position()) {
            return err("start lies outside the arena bounds".into());
        }
        if !self.bounds.contains(self.goal) {
            return err("goal lies outside the arena bounds".into());
        }
        if let Some(d) = self.discs.iter().find(|d| !(d.radius > 0.0)) {
            return err(format!("disc at {:?} has non-positive radius", d.center));
        }
        for (i, w) in self.walkers.iter().enumerate() {
            if w.waypoints.is_empty() {
                return err(format!("walker {i} has no waypoints"));
            }
            if !(w.speed >= 0.0) {
                return err(format!("walker {i} has negative speed"));
            }
            if !(w.radius > 0.0) {
                return err(format!("walker {i} has non-positive radius"));
            }
        }
        let r = &self.randomization;
        if r.obstacle_jitter < 0.0 || r.goal_jitter < 0.0 || r.start_heading_jitter < 0.0 {
            return err("randomization ranges must be non-negative".into());
        }
        if let Some(robot) = &self.robot {
            robot.validate()?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Scenario {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes to TOML")
    }

    /// One of the scenarios shipped with the crate.
    pub fn builtin(name: &str) -> Result<Self> {
        let text = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::UnknownScenario(name.to_string()))?;
        Self::from_toml_str(text, Path::new(&format!("<builtin {name}>")))
    }

    /// Resolves a built-in name or a path to a scenario file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if BUILTIN.iter().any(|(n, _)| *n == name_or_path) {
            Self::builtin(name_or_path)
        } else {
            Self::from_file(name_or_path)
        }
    }
}

pub const EVALUATION_SCENARIOS: [&str; 4] =
    ["zigzag-static", "occluded-ped", "sparse-dynamic", "dense-dynamic"];

const BUILTIN: [(&str, &str); 5] = [
    ("empty-arena", include_str!("../../scenarios/empty-arena.toml")),
    ("zigzag-static", include_str!("../../scenarios/zigzag-static.toml")),
    ("occluded-ped", include_str!("../../scenarios/occluded-ped.toml")),
    ("sparse-dynamic", include_str!("../../scenarios/sparse-dynamic.toml")),
    ("dense-dynamic", include_str!("../../scenarios/dense-dynamic.toml")),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}
