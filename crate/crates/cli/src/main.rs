//! `dwarl` command-line entry point.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid configuration, 4 missing or
//! unreadable input, 5 checkpoint problem, 6 training divergence, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dwarl::dwa::DwaConfig;
use dwarl::dynamics::VelocityPair;
use dwarl::env::{EnvConfig, NavEnv};
use dwarl::eval::{self, Ablation, DwaPlanner, MetricsReport, Planner, PolicyPlanner};
use dwarl::observation::{ChannelLayout, ObservationBuilder, ObservationConfig};
use dwarl::policy::{self, ActMode, NetworkSize, Policy, PpoConfig, TrainConfig};
use dwarl::world::{ScenarioConfig, EVALUATION_SCENARIOS};
use dwarl::{Error, Result};

const OUT_ENV: &str = "DWARL_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "dwarl", version, about = "Dynamic-window constrained RL local planner")]
struct Cli {
    /// Output directory for all artifacts.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Run a trial battery for one planner.
    Eval(EvalArgs),
    /// Run DWA and a trained policy on the same scenarios and seeds.
    Compare(CompareArgs),
    /// Train or load both arms of an ablation and evaluate them side by side.
    Ablate(AblateArgs),
    /// Write the observation block of one state as JSON.
    DumpObs(DumpArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct Overrides {
    /// Samples per velocity axis.
    #[arg(long)]
    k: Option<usize>,
    /// Scans kept in the obstacle history.
    #[arg(long)]
    n: Option<usize>,
    /// Control period in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Use the three-channel observation.
    #[arg(long)]
    three_channel: bool,
    #[arg(long)]
    r_goal: Option<f64>,
    #[arg(long)]
    r_collision: Option<f64>,
    #[arg(long)]
    r_proximity: Option<f64>,
    #[arg(long)]
    r_spatial: Option<f64>,
    #[arg(long)]
    r_danger: Option<f64>,
    /// Disable the green-zone bonus.
    #[arg(long)]
    no_positive_reinforcement: bool,
    /// Episode step limit.
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Built-in scenario name or scenario file; repeat for several.
    #[arg(long = "scenario", required = true)]
    scenarios: Vec<String>,
    /// Total environment steps.
    #[arg(long, default_value_t = 100_000)]
    steps: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = NetArg::Standard)]
    network: NetArg,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    entropy_coef: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    /// Steps per worker between updates.
    #[arg(long)]
    rollout: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Also save a checkpoint every this many updates.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum NetArg {
    Standard,
    Compact,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum PlannerArg {
    Dwa,
    DwaRl,
    Unconstrained,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Greedy,
    Sample,
}

impl From<ModeArg> for ActMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Greedy => ActMode::Greedy,
            ModeArg::Sample => ActMode::Sample,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_enum)]
    planner: PlannerArg,
    #[arg(long)]
    scenario: String,
    /// Required for learned planners.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
    mode: ModeArg,
    /// Write one trajectory CSV per trial.
    #[arg(long)]
    trajectories: bool,
    #[command(flatten)]
    dwa: DwaArgs,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug, Clone, Copy, Serialize)]
struct DwaArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma_dwa: Option<f64>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the four evaluation scenarios.
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run the same network over the absolute velocity caps.
    #[arg(long)]
    unconstrained: bool,
    #[command(flatten)]
    dwa: DwaArgs,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AblationArg {
    Pr,
    Channels,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long, value_enum)]
    kind: AblationArg,
    /// Checkpoints of the two arms (with/without PR, or 4/3 channels).
    /// Without them both arms are trained first.
    #[arg(long, num_args = 2)]
    checkpoints: Option<Vec<PathBuf>>,
    /// Scenarios used for training when no checkpoints are given.
    #[arg(long = "train-scenario")]
    train_scenarios: Vec<String>,
    #[arg(long, default_value_t = 100_000)]
    steps: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = NetArg::Standard)]
    network: NetArg,
    /// Defaults to the four evaluation scenarios.
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drive the robot with DWA for this many steps first.
    #[arg(long, default_value_t = 0)]
    warmup: usize,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "observation.json")]
    file: String,
    #[command(flatten)]
    overrides: Overrides,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::StaleScan { .. } | Error::ZeroDistance => 3,
        Error::Io { .. } | Error::Scenario { .. } | Error::UnknownScenario(_) => 4,
        Error::Checkpoint(_) => 5,
        Error::Diverged { .. } => 6,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    match cli.command {
        Command::Train(a) => train(&cli.out, a),
        Command::Eval(a) => evaluate(&cli.out, a),
        Command::Compare(a) => compare(&cli.out, a),
        Command::Ablate(a) => ablate(&cli.out, a),
        Command::DumpObs(a) => dump_obs(&cli.out, a),
    }
}

/// Resolved settings: defaults, then each scenario's tables, then flags.
struct Resolved {
    scenarios: Vec<ScenarioConfig>,
    env: EnvConfig,
    obs: ObservationConfig,
}

fn resolve(names: &[String], o: &Overrides) -> Result<Resolved> {
    let mut env = EnvConfig::default();
    let mut obs = ObservationConfig::default();
    if let Some(k) = o.k {
        obs.k = k;
    }
    if let Some(n) = o.n {
        obs.n = n;
    }
    if o.three_channel {
        obs.layout = ChannelLayout::Three;
    }
    if let Some(m) = o.max_steps {
        env.max_steps = m;
    }
    obs.validate()?;
    env.history = obs.n;
    let mut scenarios = names
        .iter()
        .map(|n| ScenarioConfig::load(n))
        .collect::<Result<Vec<_>>>()?;
    for s in &mut scenarios {
        let mut limits = s.robot.unwrap_or(env.limits);
        if let Some(dt) = o.dt {
            limits.dt = dt;
        }
        let mut reward = s.reward.unwrap_or(env.reward);
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut reward.r_goal, o.r_goal);
        set(&mut reward.r_collision, o.r_collision);
        set(&mut reward.r_proximity, o.r_proximity);
        set(&mut reward.r_spatial, o.r_spatial);
        set(&mut reward.r_danger, o.r_danger);
        if o.no_positive_reinforcement {
            reward.positive_reinforcement = false;
        }
        limits.validate()?;
        reward.validate()?;
        s.robot = Some(limits);
        s.reward = Some(reward);
    }
    if let Some(first) = scenarios.first() {
        env = env.with_scenario_overrides(first);
    }
    env.validate()?;
    Ok(Resolved { scenarios, env, obs })
}

fn dwa_config(a: &DwaArgs, k: Option<usize>) -> Result<DwaConfig> {
    let mut cfg = DwaConfig::default();
    if let Some(x) = a.alpha {
        cfg.alpha = x;
    }
    if let Some(x) = a.beta {
        cfg.beta = x;
    }
    if let Some(x) = a.gamma_dwa {
        cfg.gamma = x;
    }
    if let Some(k) = k {
        cfg.k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_policy(path: &Path, o: &Overrides) -> Result<Policy> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let p = policy::load_checkpoint(path, None)?;
    if let Some(k) = o.k.filter(|&k| k != p.obs.k) {
        return Err(Error::Checkpoint(format!(
            "{} was trained with k={} but --k {k} was given",
            path.display(),
            p.obs.k
        )));
    }
    if let Some(n) = o.n.filter(|&n| n != p.obs.n) {
        return Err(Error::Checkpoint(format!(
            "{} was trained with n={} but --n {n} was given",
            path.display(),
            p.obs.n
        )));
    }
    if o.three_channel && p.obs.layout != ChannelLayout::Three {
        return Err(Error::Checkpoint(format!(
            "{} uses a four-channel observation but --three-channel was given",
            path.display()
        )));
    }
    Ok(p)
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    argv: Vec<String>,
    version: &'static str,
    checkpoint_format: u32,
    seed: u64,
    settings: T,
    scenarios: &'a [ScenarioConfig],
    artifacts: Vec<String>,
}

fn write_manifest<T: Serialize>(
    out: &Path,
    command: &str,
    seed: u64,
    settings: T,
    scenarios: &[ScenarioConfig],
    artifacts: Vec<String>,
) -> Result<()> {
    let m = Manifest {
        command,
        argv: std::env::args().collect(),
        version: env!("CARGO_PKG_VERSION"),
        checkpoint_format: policy::CHECKPOINT_VERSION,
        seed,
        settings,
        scenarios,
        artifacts,
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&m)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn network(n: NetArg) -> NetworkSize {
    match n {
        NetArg::Standard => NetworkSize::Standard,
        NetArg::Compact => NetworkSize::Compact,
    }
}

fn train(out: &Path, a: TrainArgs) -> Result<()> {
    if a.steps == 0 {
        return Err(Error::Config("--steps must be greater than zero".into()));
    }
    let r = resolve(&a.scenarios, &a.overrides)?;
    let mut ppo = PpoConfig::default();
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut ppo.learning_rate, a.lr);
    set(&mut ppo.gamma, a.gamma);
    set(&mut ppo.lambda, a.lambda);
    set(&mut ppo.clip, a.clip);
    set(&mut ppo.entropy_coef, a.entropy_coef);
    if let Some(e) = a.epochs {
        ppo.epochs = e;
    }
    if let Some(m) = a.minibatch {
        ppo.minibatch = m;
    }
    if let Some(r) = a.rollout {
        ppo.rollout = r;
    }
    let cfg = TrainConfig {
        total_steps: a.steps,
        workers: a.workers,
        seed: a.seed,
        ppo,
        obs: r.obs,
        env: r.env,
        network: network(a.network),
    };
    cfg.validate()?;
    let init = match &a.init {
        Some(p) => Some(policy::load_checkpoint(p, Some(&cfg.obs))?),
        None => None,
    };
    let mut artifacts = vec!["policy.ckpt".to_string(), "curve.csv".to_string(), "updates.csv".to_string()];
    let every = a.checkpoint_every.unwrap_or(0);
    let report = policy::train_with_callback(&r.scenarios, &cfg, init, |stats, p| {
        eprintln!(
            "update {:>4}  steps {:>8}  loss {:>9.4}  entropy {:.3}",
            stats.update, stats.steps, stats.loss.total, stats.loss.entropy
        );
        if every > 0 && (stats.update + 1) % every == 0 {
            policy::save_checkpoint(p, out.join(format!("policy-{:05}.ckpt", stats.update + 1)))?;
        }
        Ok(())
    })?;
    if every > 0 {
        artifacts.push("policy-*.ckpt".into());
    }
    policy::save_checkpoint(&report.policy, out.join("policy.ckpt"))?;
    report.write_curve(out.join("curve.csv"))?;
    report.write_updates(out.join("updates.csv"))?;
    write_manifest(out, "train", a.seed, &cfg, &r.scenarios, artifacts)?;
    eprintln!("trained {} steps, {} episodes -> {}", report.steps, report.curve.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalSettings<'a> {
    planners: Vec<String>,
    trials: usize,
    env: &'a EnvConfig,
    dwa: Option<DwaConfig>,
    observation: Option<ObservationConfig>,
    checkpoint: Option<&'a Path>,
}

fn evaluate(out: &Path, a: EvalArgs) -> Result<()> {
    let r = resolve(std::slice::from_ref(&a.scenario), &a.overrides)?;
    let scenario = &r.scenarios[0];
    let (planner, dwa_cfg, obs): (Box<dyn Planner>, _, _) = match a.planner {
        PlannerArg::Dwa => {
            let cfg = dwa_config(&a.dwa, a.overrides.k)?;
            (Box::new(DwaPlanner::new(cfg)?), Some(cfg), None)
        }
        PlannerArg::DwaRl | PlannerArg::Unconstrained => {
            let path = a
                .checkpoint
                .as_deref()
                .ok_or_else(|| Error::Config("--checkpoint is required for learned planners".into()))?;
            let p = load_policy(path, &a.overrides)?;
            let obs = p.obs;
            let planner = if a.planner == PlannerArg::DwaRl {
                PolicyPlanner::new(p, a.mode.into())
            } else {
                PolicyPlanner::unconstrained(p, a.mode.into())
            };
            (Box::new(planner), None, Some(obs))
        }
    };
    let report = eval::run_trials(planner.as_ref(), scenario, a.trials, a.seed, &r.env)?;
    report.write_csv(out.join("metrics.csv"))?;
    let mut artifacts = vec!["metrics.csv".to_string()];
    if a.trajectories {
        let dir = out.join("trajectories");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for rec in &report.records {
            rec.write_trajectory(dir.join(format!("{}-{}-{:03}.csv", rec.planner, rec.scenario, rec.trial)))?;
        }
        artifacts.push("trajectories/*.csv".into());
    }
    let s = &report.summaries[0];
    println!(
        "{} on {}: success {:.2}  collision {:.2}  timeout {:.2}  violations {:.4}",
        s.planner, s.scenario, s.success_rate, s.collision_rate, s.timeout_rate, s.violation_rate
    );
    let settings = EvalSettings {
        planners: vec![planner.name().to_string()],
        trials: a.trials,
        env: &r.env,
        dwa: dwa_cfg,
        observation: obs,
        checkpoint: a.checkpoint.as_deref(),
    };
    write_manifest(out, "eval", a.seed, settings, &r.scenarios, artifacts)
}

fn scenario_list(given: &[String]) -> Vec<String> {
    if given.is_empty() {
        EVALUATION_SCENARIOS.iter().map(|s| s.to_string()).collect()
    } else {
        given.to_vec()
    }
}

fn print_summaries(report: &MetricsReport) {
    println!(
        "{:<16} {:<16} {:>8} {:>10} {:>8} {:>10}",
        "planner", "scenario", "success", "collision", "timeout", "violation"
    );
    for s in &report.summaries {
        println!(
            "{:<16} {:<16} {:>8.2} {:>10.2} {:>8.2} {:>10.4}",
            s.planner, s.scenario, s.success_rate, s.collision_rate, s.timeout_rate, s.violation_rate
        );
    }
}

fn compare(out: &Path, a: CompareArgs) -> Result<()> {
    let r = resolve(&scenario_list(&a.scenarios), &a.overrides)?;
    let p = load_policy(&a.checkpoint, &a.overrides)?;
    let dwa_cfg = dwa_config(&a.dwa, None)?;
    let dwa = DwaPlanner::new(dwa_cfg)?;
    let rl = PolicyPlanner::new(p.clone(), ActMode::Greedy);
    let free = PolicyPlanner::unconstrained(p.clone(), ActMode::Greedy);
    let mut planners: Vec<&dyn Planner> = vec![&dwa, &rl];
    if a.unconstrained {
        planners.push(&free);
    }
    let report = eval::compare(&planners, &r.scenarios, a.trials, a.seed, &r.env)?;
    report.write_csv(out.join("metrics.csv"))?;
    print_summaries(&report);
    let settings = EvalSettings {
        planners: planners.iter().map(|p| p.name().to_string()).collect(),
        trials: a.trials,
        env: &r.env,
        dwa: Some(dwa_cfg),
        observation: Some(p.obs),
        checkpoint: Some(&a.checkpoint),
    };
    write_manifest(out, "compare", a.seed, settings, &r.scenarios, vec!["metrics.csv".into()])
}

fn ablate(out: &Path, a: AblateArgs) -> Result<()> {
    let kind = match a.kind {
        AblationArg::Pr => Ablation::PositiveReinforcement,
        AblationArg::Channels => Ablation::Channels,
    };
    let r = resolve(&scenario_list(&a.scenarios), &a.overrides)?;
    let base = TrainConfig {
        total_steps: a.steps,
        workers: a.workers,
        seed: a.seed,
        obs: r.obs,
        env: r.env,
        network: network(a.network),
        ..TrainConfig::default()
    };
    let arms = kind.arms(&base);
    let names = kind.arm_names();
    let mut artifacts = vec!["ablation.csv".to_string()];
    let policies: Vec<Policy> = match &a.checkpoints {
        Some(paths) => paths
            .iter()
            .zip(&arms)
            .map(|(p, cfg)| policy::load_checkpoint(p, Some(&cfg.obs)))
            .collect::<Result<_>>()?,
        None => {
            if a.steps == 0 {
                return Err(Error::Config("--steps must be greater than zero".into()));
            }
            let train_names = if a.train_scenarios.is_empty() {
                scenario_list(&a.scenarios)
            } else {
                a.train_scenarios.clone()
            };
            let mut out_policies = Vec::new();
            for (cfg, name) in arms.iter().zip(names) {
                let mut scen = resolve(&train_names, &a.overrides)?.scenarios;
                for s in &mut scen {
                    s.reward = Some(cfg.env.reward);
                }
                eprintln!("training arm {name}");
                let rep = policy::train(&scen, cfg)?;
                let file = format!("{name}.ckpt");
                policy::save_checkpoint(&rep.policy, out.join(&file))?;
                artifacts.push(file);
                out_policies.push(rep.policy);
            }
            out_policies
        }
    };
    let report = eval::ablation_suite(
        kind,
        [(&policies[0], &arms[0].env), (&policies[1], &arms[1].env)],
        &r.scenarios,
        a.trials,
        a.seed,
    )?;
    report.write_csv(out.join("ablation.csv"))?;
    print_summaries(&report);
    write_manifest(out, "ablate", a.seed, &arms, &r.scenarios, artifacts)
}

fn dump_obs(out: &Path, a: DumpArgs) -> Result<()> {
    let r = resolve(std::slice::from_ref(&a.scenario), &a.overrides)?;
    let scenario = r.scenarios[0].clone();
    let mut env = NavEnv::new(scenario.clone(), r.env, a.seed)?;
    let dwa = DwaConfig {
        k: r.obs.k,
        ..DwaConfig::default()
    };
    for _ in 0..a.warmup {
        if env.is_done() {
            break;
        }
        let w = env.world();
        let cmd: VelocityPair =
            dwarl::dwa::plan(w.robot, w.velocity, &env.latest_scan().points, w.goal, &r.env.limits, &dwa);
        env.step(cmd)?;
    }
    let builder = ObservationBuilder::new(r.obs, r.env.limits)?;
    let block = env.observation(&builder)?;
    let path = out.join(&a.file);
    block.write_debug(&path)?;
    println!("{}", path.display());
    write_manifest(out, "dump-obs", a.seed, r.obs, &[scenario], vec![a.file])
}
