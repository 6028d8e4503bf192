//! Trial batteries, metrics, dynamics-violation analysis and ablations.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dwa::{self, DwaConfig};
use crate::dynamics::{feasible_window, Pose, RobotLimits, VelocityPair, VelocityWindow, WINDOW_EPS};
use crate::env::{EnvConfig, NavEnv, Outcome};
use crate::error::{Error, Result};
use crate::observation::{ActionSpace, ObservationBuilder};
use crate::policy::{ActMode, Policy};
use crate::world::ScenarioConfig;

/// Anything that maps the current environment state to a command.
pub trait Planner: Sync {
    fn name(&self) -> &str;

    /// Number of scans the planner needs in the obstacle history.
    fn history(&self) -> usize {
        1
    }

    fn command(&self, env: &NavEnv, rng: &mut ChaCha8Rng) -> Result<VelocityPair>;
}

#[derive(Debug, Clone)]
pub struct DwaPlanner {
    pub cfg: DwaConfig,
    name: String,
}

impl DwaPlanner {
    pub fn new(cfg: DwaConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            name: "dwa".into(),
        })
    }
}

impl Planner for DwaPlanner {
    fn name(&self) -> &str {
        &self.name
    }

    fn command(&self, env: &NavEnv, _rng: &mut ChaCha8Rng) -> Result<VelocityPair> {
        let w = env.world();
        Ok(dwa::plan(
            w.robot,
            w.velocity,
            &env.latest_scan().points,
            w.goal,
            &env.config().limits,
            &self.cfg,
        ))
    }
}

/// A trained policy decoding through its observation's action map.
#[derive(Debug, Clone)]
pub struct PolicyPlanner {
    pub policy: Policy,
    pub mode: ActMode,
    name: String,
}

impl PolicyPlanner {
    pub fn new(policy: Policy, mode: ActMode) -> Self {
        let name = match policy.obs.action_space {
            ActionSpace::DynamicWindow => "dwa-rl",
            ActionSpace::AbsoluteCaps => "unconstrained",
        };
        Self {
            policy,
            mode,
            name: name.into(),
        }
    }

    /// The same network acting over the absolute velocity caps instead of
    /// the dynamic window.
    pub fn unconstrained(mut policy: Policy, mode: ActMode) -> Self {
        policy.obs.action_space = ActionSpace::AbsoluteCaps;
        Self::new(policy, mode)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Planner for PolicyPlanner {
    fn name(&self) -> &str {
        &self.name
    }

    fn history(&self) -> usize {
        self.policy.obs.n
    }

    fn command(&self, env: &NavEnv, rng: &mut ChaCha8Rng) -> Result<VelocityPair> {
        let builder = ObservationBuilder {
            cfg: self.policy.obs,
            limits: env.config().limits,
        };
        let block = env.observation(&builder)?;
        Ok(self.policy.act(&block, self.mode, rng)?.command)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub command: VelocityPair,
    /// Window reachable from the previously executed command.
    pub window: VelocityWindow,
    /// Pose after the step.
    pub pose: Pose,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub planner: String,
    pub scenario: String,
    pub trial: usize,
    pub seed: u64,
    pub start: Pose,
    pub initial_velocity: VelocityPair,
    pub limits: RobotLimits,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    /// Sum of step displacements (m).
    pub length: f64,
    /// Simulated time (s).
    pub time: f64,
}

impl EpisodeRecord {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn violations(&self) -> usize {
        let mut prev = self.initial_velocity;
        let mut count = 0;
        for s in &self.steps {
            if !feasible_window(prev, &self.limits).contains(s.command, WINDOW_EPS) {
                count += 1;
            }
            prev = s.command;
        }
        count
    }

    /// Writes `step,x,y,theta,v,w,reward`.
    pub fn write_trajectory(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            step: usize,
            x: f64,
            y: f64,
            theta: f64,
            v: f64,
            w: f64,
            reward: f64,
        }
        let path = path.as_ref();
        let mut w = csv_writer(path)?;
        w.serialize(Row {
            step: 0,
            x: self.start.x,
            y: self.start.y,
            theta: self.start.theta,
            v: self.initial_velocity.v,
            w: self.initial_velocity.w,
            reward: 0.0,
        })?;
        for (i, s) in self.steps.iter().enumerate() {
            w.serialize(Row {
                step: i + 1,
                x: s.pose.x,
                y: s.pose.y,
                theta: s.pose.theta,
                v: s.command.v,
                w: s.command.w,
                reward: s.reward,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fraction of commands outside the window implied by the previously
/// executed command. Zero for an empty record.
pub fn violation_rate(record: &EpisodeRecord) -> f64 {
    if record.steps.is_empty() {
        return 0.0;
    }
    record.violations() as f64 / record.steps.len() as f64
}

/// Runs one episode to completion.
pub fn run_episode(
    planner: &dyn Planner,
    scenario: &ScenarioConfig,
    env_cfg: &EnvConfig,
    trial: usize,
    seed: u64,
) -> Result<EpisodeRecord> {
    let cfg = EnvConfig {
        history: planner.history().max(1),
        ..env_cfg.with_scenario_overrides(scenario)
    };
    let mut env = NavEnv::new(scenario.clone(), cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let start = env.world().robot;
    let initial_velocity = env.world().velocity;
    let mut steps = Vec::new();
    let mut length = 0.0;
    let outcome = loop {
        let prev = env.world().velocity;
        let before = env.world().robot.position();
        let command = planner.command(&env, &mut rng)?;
        let r = env.step(command)?;
        let pose = env.world().robot;
        length += pose.position().distance(before);
        steps.push(StepRecord {
            command,
            window: feasible_window(prev, &cfg.limits),
            pose,
            reward: r.reward.total,
        });
        if let Some(o) = r.outcome {
            break o;
        }
    };
    Ok(EpisodeRecord {
        planner: planner.name().to_string(),
        scenario: scenario.name.clone(),
        trial,
        seed,
        start,
        initial_velocity,
        limits: cfg.limits,
        time: steps.len() as f64 * cfg.limits.dt,
        steps,
        outcome,
        length,
    })
}

/// One CSV row: either a trial or a per-(planner, scenario) summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub kind: String,
    pub planner: String,
    pub scenario: String,
    pub trial: Option<usize>,
    pub seed: Option<u64>,
    pub trials: usize,
    pub outcome: Option<String>,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    /// Means over successful trials only; empty when there were none.
    pub avg_length: Option<f64>,
    pub avg_time: Option<f64>,
    pub avg_velocity: Option<f64>,
    pub steps: usize,
    pub violation_rate: f64,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub planner: String,
    pub scenario: String,
    pub trials: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    pub avg_length: Option<f64>,
    pub avg_time: Option<f64>,
    pub avg_velocity: Option<f64>,
    pub steps: usize,
    pub violation_rate: f64,
    pub mean_reward: f64,
}

impl Summary {
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let rate = |o: Outcome| records.iter().filter(|r| r.outcome == o).count() as f64 / n;
        let ok: Vec<&EpisodeRecord> = records.iter().filter(|r| r.outcome == Outcome::Success).collect();
        let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| {
            (!ok.is_empty()).then(|| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64)
        };
        let steps: usize = records.iter().map(|r| r.steps.len()).sum();
        let violations: usize = records.iter().map(|r| r.violations()).sum();
        Self {
            planner: records.first().map(|r| r.planner.clone()).unwrap_or_default(),
            scenario: records.first().map(|r| r.scenario.clone()).unwrap_or_default(),
            trials: records.len(),
            success_rate: rate(Outcome::Success),
            collision_rate: rate(Outcome::Collision),
            timeout_rate: rate(Outcome::Timeout),
            avg_length: mean(&|r| r.length),
            avg_time: mean(&|r| r.time),
            avg_velocity: mean(&|r| if r.time > 0.0 { r.length / r.time } else { 0.0 }),
            steps,
            violation_rate: if steps == 0 { 0.0 } else { violations as f64 / steps as f64 },
            mean_reward: records.iter().map(|r| r.total_reward()).sum::<f64>() / n,
        }
    }

    fn row(&self) -> MetricsRow {
        MetricsRow {
            kind: "summary".into(),
            planner: self.planner.clone(),
            scenario: self.scenario.clone(),
            trial: None,
            seed: None,
            trials: self.trials,
            outcome: None,
            success_rate: self.success_rate,
            collision_rate: self.collision_rate,
            timeout_rate: self.timeout_rate,
            avg_length: self.avg_length,
            avg_time: self.avg_time,
            avg_velocity: self.avg_velocity,
            steps: self.steps,
            violation_rate: self.violation_rate,
            total_reward: self.mean_reward,
        }
    }
}

fn trial_row(r: &EpisodeRecord) -> MetricsRow {
    let s = Summary::from_records(std::slice::from_ref(r));
    MetricsRow {
        kind: "trial".into(),
        trial: Some(r.trial),
        seed: Some(r.seed),
        outcome: Some(r.outcome.as_str().into()),
        total_reward: r.total_reward(),
        ..s.row()
    }
}

/// Episode records of one or more batteries with their summaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<EpisodeRecord>,
    pub summaries: Vec<Summary>,
}

impl MetricsReport {
    pub fn from_records(records: Vec<EpisodeRecord>) -> Self {
        let summaries = vec![Summary::from_records(&records)];
        Self { records, summaries }
    }

    pub fn merge(reports: impl IntoIterator<Item = MetricsReport>) -> Self {
        let mut out = Self::default();
        for r in reports {
            out.records.extend(r.records);
            out.summaries.extend(r.summaries);
        }
        out
    }

    pub fn summary(&self, planner: &str, scenario: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.planner == planner && s.scenario == scenario)
    }

    /// Trial rows followed by summary rows.
    pub fn rows(&self) -> Vec<MetricsRow> {
        self.records
            .iter()
            .map(trial_row)
            .chain(self.summaries.iter().map(Summary::row))
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv_writer(path)?;
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Runs `trials` episodes; trial `i` uses seed `base_seed + i`.
pub fn run_trials(
    planner: &dyn Planner,
    scenario: &ScenarioConfig,
    trials: usize,
    base_seed: u64,
    env_cfg: &EnvConfig,
) -> Result<MetricsReport> {
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let records = (0..trials)
        .into_par_iter()
        .map(|i| run_episode(planner, scenario, env_cfg, i, base_seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_records(records))
}

/// Every planner on every scenario with the same seeds.
pub fn compare(
    planners: &[&dyn Planner],
    scenarios: &[ScenarioConfig],
    trials: usize,
    base_seed: u64,
    env_cfg: &EnvConfig,
) -> Result<MetricsReport> {
    let mut reports = Vec::new();
    for p in planners {
        for s in scenarios {
            reports.push(run_trials(*p, s, trials, base_seed, env_cfg)?);
        }
    }
    Ok(MetricsReport::merge(reports))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Reward with and without the green-zone bonus.
    PositiveReinforcement,
    /// Four-channel observation against the three-channel variant.
    Channels,
}

impl Ablation {
    /// The two arm names in report order.
    pub fn arm_names(self) -> [&'static str; 2] {
        match self {
            Ablation::PositiveReinforcement => ["with-pr", "without-pr"],
            Ablation::Channels => ["4-matrix", "3-matrix"],
        }
    }

    /// Training configurations of both arms derived from `base`.
    pub fn arms(self, base: &crate::policy::TrainConfig) -> [crate::policy::TrainConfig; 2] {
        let mut a = base.clone();
        let mut b = base.clone();
        match self {
            Ablation::PositiveReinforcement => {
                a.env.reward.positive_reinforcement = true;
                b.env.reward.positive_reinforcement = false;
            }
            Ablation::Channels => {
                a.obs.layout = crate::observation::ChannelLayout::Four;
                b.obs.layout = crate::observation::ChannelLayout::Three;
            }
        }
        [a, b]
    }
}

/// Evaluates two trained arms on every scenario: one summary per
/// (arm, scenario) pair. Each arm runs under its own reward settings, which
/// replace any `[reward]` table of the scenarios.
pub fn ablation_suite(
    ablation: Ablation,
    arms: [(&Policy, &EnvConfig); 2],
    scenarios: &[ScenarioConfig],
    trials: usize,
    base_seed: u64,
) -> Result<MetricsReport> {
    let mut reports = Vec::new();
    for ((policy, env_cfg), name) in arms.into_iter().zip(ablation.arm_names()) {
        let planner = PolicyPlanner::new(policy.clone(), ActMode::Greedy).with_name(name);
        for s in scenarios {
            let s = ScenarioConfig {
                reward: Some(env_cfg.reward),
                ..s.clone()
            };
            reports.push(run_trials(&planner, &s, trials, base_seed, env_cfg)?);
        }
    }
    Ok(MetricsReport::merge(reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<VelocityPair>);

    impl Planner for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }

        fn command(&self, env: &NavEnv, _rng: &mut ChaCha8Rng) -> Result<VelocityPair> {
            Ok(self.0[env.steps() % self.0.len()])
        }
    }

    fn record(commands: &[VelocityPair]) -> EpisodeRecord {
        let limits = RobotLimits::default();
        EpisodeRecord {
            planner: "x".into(),
            scenario: "s".into(),
            trial: 0,
            seed: 0,
            start: Pose::default(),
            initial_velocity: VelocityPair::STOP,
            limits,
            steps: commands
                .iter()
                .map(|&c| StepRecord {
                    command: c,
                    window: limits.caps(),
                    pose: Pose::default(),
                    reward: 0.0,
                })
                .collect(),
            outcome: Outcome::Timeout,
            length: 0.0,
            time: 0.0,
        }
    }

    #[test]
    fn alternating_angular_jumps_always_violate() {
        let cmds: Vec<_> = (0..10)
            .map(|i| VelocityPair::new(0.0, if i % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        assert_eq!(violation_rate(&record(&cmds)), 1.0);
    }

    #[test]
    fn half_violating_record() {
        let cmds = [
            VelocityPair::new(0.1, 0.0),
            VelocityPair::new(0.6, 0.0),
            VelocityPair::new(0.5, 0.0),
            VelocityPair::new(0.0, 0.0),
        ];
        assert_eq!(violation_rate(&record(&cmds)), 0.5);
    }

    #[test]
    fn summary_averages_over_successes() {
        let mut a = record(&[VelocityPair::STOP]);
        a.outcome = Outcome::Success;
        a.length = 10.0;
        a.time = 25.0;
        let b = record(&[VelocityPair::STOP]);
        let s = Summary::from_records(&[a, b]);
        assert_eq!(s.success_rate, 0.5);
        assert_eq!(s.avg_velocity, Some(0.4));
        assert_eq!(s.avg_length, Some(10.0));
    }

    #[test]
    fn dwa_battery_is_deterministic_and_feasible() {
        let planner = DwaPlanner::new(DwaConfig::default()).unwrap();
        let scenario = ScenarioConfig::builtin("zigzag-static").unwrap();
        let cfg = EnvConfig {
            max_steps: 60,
            ..EnvConfig::default()
        };
        let a = run_trials(&planner, &scenario, 3, 7, &cfg).unwrap();
        let b = run_trials(&planner, &scenario, 3, 7, &cfg).unwrap();
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
        assert_eq!(a.summaries[0].violation_rate, 0.0);
        for r in &a.records {
            let sum: f64 = r
                .steps
                .windows(2)
                .map(|w| w[1].pose.position().distance(w[0].pose.position()))
                .sum::<f64>()
                + r.steps[0].pose.position().distance(r.start.position());
            assert!((sum - r.length).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_planner_episode_runs_until_timeout() {
        let planner = Fixed(vec![VelocityPair::STOP]);
        let cfg = EnvConfig {
            max_steps: 7,
            ..EnvConfig::default()
        };
        let scenario = ScenarioConfig::builtin("empty-arena").unwrap();
        let r = run_episode(&planner, &scenario, &cfg, 0, 1).unwrap();
        assert_eq!(r.outcome, Outcome::Timeout);
        assert_eq!(r.steps.len(), 7);
        assert_eq!(r.time, 7.0 * cfg.limits.dt);
    }

    #[test]
    fn zero_trials_rejected() {
        let planner = Fixed(vec![VelocityPair::STOP]);
        let scenario = ScenarioConfig::builtin("empty-arena").unwrap();
        assert!(run_trials(&planner, &scenario, 0, 0, &EnvConfig::default()).is_err());
    }
}
