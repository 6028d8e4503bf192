//! The sorted cost-matrix observation and its action map.
//!
//! For every command of the discretized feasible set the builder records the
//! command itself, its obstacle cost against each of the last `n` scans and
//! its goal cost. Rows are then sorted by the total cost at the newest scan so
//! that row 0 holds the cheapest command. The sorted commands form the action
//! space: whatever index a policy picks, the decoded command came from the
//! dynamic window.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    arc_endpoint, discretize_window, dist_along_arc, feasible_window, Pose, RobotLimits,
    VelocityPair, VelocityWindow,
};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::world::ObstacleHistory;

/// Obstacle cost assigned to arcs closer than the robot radius.
pub const C_COL: f64 = 40.0;
/// Goal-alignment cost per metre of endpoint-to-goal distance.
pub const C_GA: f64 = 2.5;

/// Channel order of the stacked block.
pub const LINEAR: usize = 0;
pub const ANGULAR: usize = 1;
pub const OBSTACLE: usize = 2;
pub const GOAL: usize = 3;

/// Which robot pose the past obstacle columns are evaluated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryFrame {
    /// Every column uses the current pose.
    #[default]
    CurrentPose,
    /// Each column uses the pose the scan was taken from.
    ScanPose,
}

/// Channels fed to the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelLayout {
    /// linear, angular, obstacle cost, goal cost
    #[default]
    Four,
    /// linear, angular, obstacle + goal cost
    Three,
}

impl ChannelLayout {
    pub fn channels(self) -> usize {
        match self {
            ChannelLayout::Four => 4,
            ChannelLayout::Three => 3,
        }
    }
}

/// Velocity set the action map is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionSpace {
    /// The acceleration-limited dynamic window around the current command.
    #[default]
    DynamicWindow,
    /// The full box of absolute velocity caps, ignoring acceleration limits.
    AbsoluteCaps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationConfig {
    /// Samples per velocity axis; the action space has `k²` entries.
    pub k: usize,
    /// Number of past scans.
    pub n: usize,
    pub c_col: f64,
    pub c_ga: f64,
    pub arc_samples: usize,
    pub frame: HistoryFrame,
    pub layout: ChannelLayout,
    pub action_space: ActionSpace,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n: 10,
            c_col: C_COL,
            c_ga: C_GA,
            arc_samples: crate::dynamics::DEFAULT_ARC_SAMPLES,
            frame: HistoryFrame::CurrentPose,
            layout: ChannelLayout::Four,
            action_space: ActionSpace::DynamicWindow,
        }
    }
}

impl ObservationConfig {
    pub fn actions(&self) -> usize {
        self.k * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config("k must be at least 2".into()));
        }
        if self.n < 1 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.arc_samples < 2 {
            return Err(Error::Config("arc_samples must be at least 2".into()));
        }
        if !(self.c_col > 0.0) || !(self.c_ga >= 0.0) {
            return Err(Error::Config("cost constants must be positive".into()));
        }
        Ok(())
    }

    /// The velocity box the action map is discretized from.
    pub fn window(&self, current: VelocityPair, limits: &RobotLimits) -> VelocityWindow {
        match self.action_space {
            ActionSpace::DynamicWindow => feasible_window(current, limits),
            ActionSpace::AbsoluteCaps => limits.caps(),
        }
    }
}

/// `c_col` inside the robot radius, `1 / distance` outside, 0 when nothing was sensed.
pub fn obstacle_cost(distance: f64, radius: f64, c_col: f64) -> f64 {
    if distance.is_infinite() {
        0.0
    } else if distance < radius {
        c_col
    } else {
        1.0 / distance
    }
}

/// Endpoint-to-goal distance scaled by `c_ga`.
pub fn goal_cost(endpoint: Point2, goal: Point2, c_ga: f64) -> f64 {
    endpoint.distance(goal) * c_ga
}

/// Unsorted `k² × n` cost matrices. Row `i` belongs to `commands[i]`, column
/// `j` to the `j`-th history row (oldest first, newest last).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrices {
    pub commands: Vec<VelocityPair>,
    pub lin: Array2<f64>,
    pub ang: Array2<f64>,
    pub oc: Array2<f64>,
    pub gc: Array2<f64>,
    /// Total cost at the newest column.
    pub tc: Vec<f64>,
}

impl CostMatrices {
    pub fn rows(&self) -> usize {
        self.commands.len()
    }

    pub fn columns(&self) -> usize {
        self.oc.ncols()
    }
}

pub fn build_matrices(
    commands: &[VelocityPair],
    history: &ObstacleHistory,
    pose: Pose,
    goal: Point2,
    limits: &RobotLimits,
    cfg: &ObservationConfig,
) -> Result<CostMatrices> {
    if commands.len() != cfg.actions() {
        return Err(Error::Dimension {
            what: "feasible set",
            expected: cfg.actions(),
            actual: commands.len(),
        });
    }
    if history.len() != cfg.n {
        return Err(Error::Dimension {
            what: "obstacle history",
            expected: cfg.n,
            actual: history.len(),
        });
    }
    let rows = commands.len();
    let n = cfg.n;
    let mut lin = Array2::zeros((rows, n));
    let mut ang = Array2::zeros((rows, n));
    let mut oc = Array2::zeros((rows, n));
    let mut gc = Array2::zeros((rows, n));

    for (i, &cmd) in commands.iter().enumerate() {
        let end = arc_endpoint(pose, cmd, limits.dt).position();
        let g = goal_cost(end, goal, cfg.c_ga);
        for (j, scan) in history.frames().enumerate() {
            let from = match cfg.frame {
                HistoryFrame::CurrentPose => pose,
                HistoryFrame::ScanPose => scan.pose,
            };
            let d = dist_along_arc(from, cmd, &scan.points, limits.dt, cfg.arc_samples);
            oc[[i, j]] = obstacle_cost(d, limits.radius, cfg.c_col);
            lin[[i, j]] = cmd.v;
            ang[[i, j]] = cmd.w;
            gc[[i, j]] = g;
        }
    }
    let tc = (0..rows).map(|i| oc[[i, n - 1]] + gc[[i, n - 1]]).collect();
    Ok(CostMatrices {
        commands: commands.to_vec(),
        lin,
        ang,
        oc,
        gc,
        tc,
    })
}

/// The stacked, sorted `k² × n × 4` observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBlock {
    /// Raw values indexed `[row, column, channel]`.
    pub data: Array3<f64>,
    /// Sorted commands; index 0 has the lowest total cost.
    pub action_map: Vec<VelocityPair>,
    /// `sort_perm[i]` is the unsorted row placed at sorted position `i`.
    pub sort_perm: Vec<usize>,
    /// Sorted total costs.
    pub tc: Vec<f64>,
}

pub fn sort_block(m: &CostMatrices) -> ObservationBlock {
    let rows = m.rows();
    let n = m.columns();
    let mut perm: Vec<usize> = (0..rows).collect();
    // stable, so ties keep their pre-sort order
    perm.sort_by(|&a, &b| m.tc[a].total_cmp(&m.tc[b]));

    let mut data = Array3::zeros((rows, n, 4));
    for (dst, &src) in perm.iter().enumerate() {
        for j in 0..n {
            data[[dst, j, LINEAR]] = m.lin[[src, j]];
            data[[dst, j, ANGULAR]] = m.ang[[src, j]];
            data[[dst, j, OBSTACLE]] = m.oc[[src, j]];
            data[[dst, j, GOAL]] = m.gc[[src, j]];
        }
    }
    ObservationBlock {
        data,
        action_map: perm.iter().map(|&i| m.commands[i]).collect(),
        tc: perm.iter().map(|&i| m.tc[i]).collect(),
        sort_perm: perm,
    }
}

/// Fixed per-channel scales that bring policy inputs into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormScales {
    pub linear: f64,
    pub angular: f64,
    pub cost: f64,
}

impl NormScales {
    pub fn new(limits: &RobotLimits, cfg: &ObservationConfig) -> Self {
        Self {
            linear: limits.v_min.abs().max(limits.v_max.abs()).max(f64::MIN_POSITIVE),
            angular: limits.w_min.abs().max(limits.w_max.abs()),
            cost: cfg.c_col,
        }
    }
}

impl ObservationBlock {
    pub fn rows(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn columns(&self) -> usize {
        self.data.shape()[1]
    }

    /// Command stored in the block's velocity channels at `row`, newest column.
    pub fn command_at(&self, row: usize) -> VelocityPair {
        let j = self.columns() - 1;
        VelocityPair::new(self.data[[row, j, LINEAR]], self.data[[row, j, ANGULAR]])
    }

    /// Normalized policy input, channels last: `[row][column][channel]`.
    pub fn policy_input(&self, scales: &NormScales, layout: ChannelLayout) -> Vec<f64> {
        let c = layout.channels();
        let mut out = Vec::with_capacity(self.rows() * self.columns() * c);
        let unit = |x: f64| x.clamp(-1.0, 1.0);
        for i in 0..self.rows() {
            for j in 0..self.columns() {
                out.push(unit(self.data[[i, j, LINEAR]] / scales.linear));
                out.push(unit(self.data[[i, j, ANGULAR]] / scales.angular));
                let oc = self.data[[i, j, OBSTACLE]];
                let gc = self.data[[i, j, GOAL]];
                match layout {
                    ChannelLayout::Four => {
                        out.push(unit(oc / scales.cost));
                        out.push(unit(gc / scales.cost));
                    }
                    ChannelLayout::Three => out.push(unit((oc + gc) / scales.cost)),
                }
            }
        }
        out
    }

    /// Writes a pretty-printed JSON dump.
    pub fn write_debug(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.debug_string().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn debug_string(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            index: usize,
            source_row: usize,
            command: VelocityPair,
            total_cost: f64,
            obstacle_cost: Vec<f64>,
            goal_cost: Vec<f64>,
        }
        #[derive(Serialize)]
        struct Dump {
            rows: usize,
            columns: usize,
            channels: [&'static str; 4],
            entries: Vec<Row>,
        }
        let n = self.columns();
        let entries = (0..self.rows())
            .map(|i| Row {
                index: i,
                source_row: self.sort_perm[i],
                command: self.action_map[i],
                total_cost: self.tc[i],
                obstacle_cost: (0..n).map(|j| self.data[[i, j, OBSTACLE]]).collect(),
                goal_cost: (0..n).map(|j| self.data[[i, j, GOAL]]).collect(),
            })
            .collect();
        let dump = Dump {
            rows: self.rows(),
            columns: n,
            channels: ["linear", "angular", "obstacle_cost", "goal_cost"],
            entries,
        };
        let mut s = serde_json::to_string_pretty(&dump).expect("dump serializes");
        s.push('\n');
        s
    }
}

/// Builds observation blocks for one robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationBuilder {
    pub cfg: ObservationConfig,
    pub limits: RobotLimits,
}

impl ObservationBuilder {
    pub fn new(cfg: ObservationConfig, limits: RobotLimits) -> Result<Self> {
        cfg.validate()?;
        limits.validate()?;
        Ok(Self { cfg, limits })
    }

    /// The discretized velocity set for the current command, before sorting.
    pub fn feasible_set(&self, current: VelocityPair) -> Vec<VelocityPair> {
        discretize_window(&self.cfg.window(current, &self.limits), self.cfg.k)
    }

    pub fn build(
        &self,
        pose: Pose,
        current: VelocityPair,
        history: &ObstacleHistory,
        goal: Point2,
    ) -> Result<ObservationBlock> {
        let commands = self.feasible_set(current);
        let m = build_matrices(&commands, history, pose, goal, &self.limits, &self.cfg)?;
        Ok(sort_block(&m))
    }

    pub fn scales(&self) -> NormScales {
        NormScales::new(&self.limits, &self.cfg)
    }
}
