//! Synchronous multi-worker PPO training loop.
//!
//! Each worker owns an isolated environment and random stream. Workers are
//! stepped in lockstep: observations are built in parallel, the policy is
//! evaluated on the stacked batch, and the environments advance in parallel.
//! Results are always gathered in worker order, so a run is reproducible for
//! a fixed seed regardless of the thread count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::NetworkSpec;
use super::ppo::{clip_grad_norm, gae, normalize, ppo_loss_and_grad, Adam, LossTerms, Minibatch, PpoConfig};
use super::{choose, ActMode, Policy};
use crate::env::{EnvConfig, NavEnv};
use crate::error::{Error, Result};
use crate::observation::{ObservationBuilder, ObservationConfig};
use crate::world::ScenarioConfig;

/// Gradient work is split into chunks of this many samples.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NetworkSize {
    #[default]
    Standard,
    Compact,
    Custom {
        conv: Vec<usize>,
        hidden: Vec<usize>,
    },
}

impl NetworkSize {
    pub fn spec(&self, obs: &ObservationConfig) -> NetworkSpec {
        let (h, w, c, a) = (obs.actions(), obs.n, obs.layout.channels(), obs.actions());
        match self {
            NetworkSize::Standard => NetworkSpec::standard(h, w, c, a),
            NetworkSize::Compact => NetworkSpec::compact(h, w, c, a),
            NetworkSize::Custom { conv, hidden } => NetworkSpec {
                height: h,
                width: w,
                channels: c,
                conv: conv.clone(),
                hidden: hidden.clone(),
                actions: a,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub workers: usize,
    pub seed: u64,
    pub ppo: PpoConfig,
    pub obs: ObservationConfig,
    pub env: EnvConfig,
    pub network: NetworkSize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            workers: 4,
            seed: 0,
            ppo: PpoConfig::default(),
            obs: ObservationConfig::default(),
            env: EnvConfig::default(),
            network: NetworkSize::Standard,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("at least one worker is required".into()));
        }
        self.ppo.validate()?;
        self.obs.validate()?;
        self.env.validate()?;
        self.network.spec(&self.obs).validate()
    }
}

/// One finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    /// Environment steps taken by all workers when the episode ended.
    pub step: u64,
    pub episode: u64,
    pub worker: usize,
    pub scenario: String,
    pub episode_reward: f64,
    pub episode_length: usize,
    pub outcome: String,
    /// Loss terms of the most recent update; empty before the first update.
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: usize,
    pub steps: u64,
    pub loss: LossTerms,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub policy: Policy,
    pub curve: Vec<CurveRow>,
    pub updates: Vec<UpdateStats>,
    pub steps: u64,
}

impl TrainReport {
    pub fn write_curve(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for row in &self.curve {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One row per optimizer phase.
    pub fn write_updates(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            update: usize,
            steps: u64,
            policy_loss: f64,
            value_loss: f64,
            entropy: f64,
            total_loss: f64,
            approx_kl: f64,
            clip_fraction: f64,
            grad_norm: f64,
        }
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for u in &self.updates {
            w.serialize(Row {
                update: u.update,
                steps: u.steps,
                policy_loss: u.loss.policy,
                value_loss: u.loss.value,
                entropy: u.loss.entropy,
                total_loss: u.loss.total,
                approx_kl: u.loss.approx_kl,
                clip_fraction: u.loss.clip_fraction,
                grad_norm: u.grad_norm,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct Worker {
    env: NavEnv,
    rng: ChaCha8Rng,
    episode_reward: f64,
    inputs: Vec<f64>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

impl Worker {
    fn clear(&mut self) {
        self.inputs.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.values.clear();
        self.rewards.clear();
        self.dones.clear();
    }
}

pub fn train(scenarios: &[ScenarioConfig], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with_callback(scenarios, cfg, None, |_, _| Ok(()))
}

/// Trains from `init` (or a fresh network) and calls `on_update` after every
/// optimizer phase.
pub fn train_with_callback<F>(
    scenarios: &[ScenarioConfig],
    cfg: &TrainConfig,
    init: Option<Policy>,
    mut on_update: F,
) -> Result<TrainReport>
where
    F: FnMut(&UpdateStats, &Policy) -> Result<()>,
{
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(Error::Config("training needs at least one scenario".into()));
    }
    let env_cfg = EnvConfig {
        history: cfg.obs.n,
        ..cfg.env
    };
    let builder = ObservationBuilder::new(cfg.obs, env_cfg.limits)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = match init {
        Some(p) => {
            let expected = cfg.network.spec(&cfg.obs);
            if p.net.spec().height != expected.height
                || p.net.spec().width != expected.width
                || p.net.spec().channels != expected.channels
            {
                return Err(Error::Checkpoint("initial policy does not fit the observation settings".into()));
            }
            p
        }
        None => Policy::new(&cfg.network, cfg.obs, &env_cfg.limits, &mut rng)?,
    };
    let mut adam = Adam::new(policy.net.params().len());

    let mut workers = (0..cfg.workers)
        .map(|i| {
            let scenario = scenarios[i % scenarios.len()].clone();
            let mut wrng = ChaCha8Rng::seed_from_u64(cfg.seed);
            wrng.set_stream(i as u64 + 1);
            let ecfg = EnvConfig {
                history: cfg.obs.n,
                ..env_cfg.with_scenario_overrides(&scenario)
            };
            let seed = wrng.random();
            Ok(Worker {
                env: NavEnv::new(scenario, ecfg, seed)?,
                rng: wrng,
                episode_reward: 0.0,
                inputs: Vec::new(),
                actions: Vec::new(),
                log_probs: Vec::new(),
                values: Vec::new(),
                rewards: Vec::new(),
                dones: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let input_len = policy.net.spec().input_len();
    let n_workers = cfg.workers as u64;
    let mut steps = 0u64;
    let mut episodes = 0u64;
    let mut curve = Vec::new();
    let mut updates = Vec::new();
    let mut last_loss: Option<LossTerms> = None;

    while steps < cfg.total_steps {
        let remaining = (cfg.total_steps - steps).div_ceil(n_workers);
        let horizon = (cfg.ppo.rollout as u64).min(remaining) as usize;
        workers.iter_mut().for_each(Worker::clear);

        for _ in 0..horizon {
            let inputs = stacked_inputs(&workers, &builder, &policy)?;
            let (logp, values) = policy.evaluate(&inputs.0, workers.len())?;
            let mut commands = Vec::with_capacity(workers.len());
            for (i, w) in workers.iter_mut().enumerate() {
                let row = logp.row(i);
                let row = row.as_slice().expect("contiguous row");
                let a = choose(row, ActMode::Sample, &mut w.rng);
                w.inputs.extend_from_slice(&inputs.0[i * input_len..(i + 1) * input_len]);
                w.actions.push(a);
                w.log_probs.push(row[a]);
                w.values.push(values[i]);
                commands.push(inputs.1[i][a]);
            }
            let results = workers
                .par_iter_mut()
                .zip(commands)
                .map(|(w, cmd)| w.env.step(cmd))
                .collect::<Result<Vec<_>>>()?;
            steps += n_workers;
            for (i, (w, r)) in workers.iter_mut().zip(results).enumerate() {
                if !r.reward.total.is_finite() {
                    return Err(Error::Diverged {
                        step: steps,
                        what: "reward",
                    });
                }
                w.episode_reward += r.reward.total;
                w.rewards.push(r.reward.total * cfg.ppo.reward_scale);
                w.dones.push(r.outcome.is_some());
                if let Some(outcome) = r.outcome {
                    episodes += 1;
                    curve.push(CurveRow {
                        step: steps,
                        episode: episodes,
                        worker: i,
                        scenario: w.env.scenario().name.clone(),
                        episode_reward: w.episode_reward,
                        episode_length: w.env.steps(),
                        outcome: outcome.as_str().to_string(),
                        policy_loss: last_loss.map(|l| l.policy),
                        value_loss: last_loss.map(|l| l.value),
                        entropy: last_loss.map(|l| l.entropy),
                    });
                    w.episode_reward = 0.0;
                    let seed = w.rng.random();
                    w.env.reset(seed)?;
                }
            }
        }

        let (boot_inputs, _) = stacked_inputs(&workers, &builder, &policy)?;
        let (_, boot) = policy.evaluate(&boot_inputs, workers.len())?;

        let mut all_inputs = Vec::new();
        let mut actions = Vec::new();
        let mut old_lp = Vec::new();
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        for (w, &next_value) in workers.iter().zip(&boot) {
            let (adv, ret) = gae(&w.rewards, &w.values, &w.dones, next_value, cfg.ppo.gamma, cfg.ppo.lambda);
            all_inputs.extend_from_slice(&w.inputs);
            actions.extend_from_slice(&w.actions);
            old_lp.extend_from_slice(&w.log_probs);
            advantages.extend(adv);
            returns.extend(ret);
        }

        let stats = optimize(
            &mut policy,
            &mut adam,
            &cfg.ppo,
            &mut rng,
            Batch {
                inputs: &all_inputs,
                input_len,
                actions: &actions,
                old_log_probs: &old_lp,
                advantages: &advantages,
                returns: &returns,
            },
            steps,
        )?;
        let stats = UpdateStats {
            update: updates.len(),
            steps,
            ..stats
        };
        last_loss = Some(stats.loss);
        on_update(&stats, &policy)?;
        updates.push(stats);
    }

    Ok(TrainReport {
        policy,
        curve,
        updates,
        steps,
    })
}

type Stacked = (Vec<f64>, Vec<Vec<crate::dynamics::VelocityPair>>);

fn stacked_inputs(workers: &[Worker], builder: &ObservationBuilder, policy: &Policy) -> Result<Stacked> {
    let per_worker = workers
        .par_iter()
        .map(|w| {
            let block = w.env.observation(builder)?;
            Ok((policy.input(&block)?, block.action_map))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut inputs = Vec::new();
    let mut maps = Vec::with_capacity(per_worker.len());
    for (x, m) in per_worker {
        inputs.extend(x);
        maps.push(m);
    }
    Ok((inputs, maps))
}

struct Batch<'a> {
    inputs: &'a [f64],
    input_len: usize,
    actions: &'a [usize],
    old_log_probs: &'a [f64],
    advantages: &'a [f64],
    returns: &'a [f64],
}

fn optimize(
    policy: &mut Policy,
    adam: &mut Adam,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
    batch: Batch<'_>,
    steps: u64,
) -> Result<UpdateStats> {
    let n = batch.actions.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_sum = LossTerms::default();
    let mut grad_norm_sum = 0.0;
    let mut count = 0usize;
    let mut mb_inputs = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch) {
            mb_inputs.clear();
            for &i in idx {
                mb_inputs.extend_from_slice(&batch.inputs[i * batch.input_len..(i + 1) * batch.input_len]);
            }
            let actions: Vec<usize> = idx.iter().map(|&i| batch.actions[i]).collect();
            let old: Vec<f64> = idx.iter().map(|&i| batch.old_log_probs[i]).collect();
            let mut adv: Vec<f64> = idx.iter().map(|&i| batch.advantages[i]).collect();
            let ret: Vec<f64> = idx.iter().map(|&i| batch.returns[i]).collect();
            normalize(&mut adv);

            let b = idx.len();
            let net = &policy.net;
            let parts = (0..b.div_ceil(GRAD_CHUNK))
                .into_par_iter()
                .map(|c| {
                    let lo = c * GRAD_CHUNK;
                    let hi = (lo + GRAD_CHUNK).min(b);
                    let mb = Minibatch {
                        inputs: &mb_inputs[lo * batch.input_len..hi * batch.input_len],
                        actions: &actions[lo..hi],
                        old_log_probs: &old[lo..hi],
                        advantages: &adv[lo..hi],
                        returns: &ret[lo..hi],
                    };
                    ppo_loss_and_grad(net, &mb, cfg).map(|r| (hi - lo, r))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; net.params().len()];
            let mut loss = LossTerms::default();
            for (len, (l, g)) in parts {
                let wgt = len as f64 / b as f64;
                grad.iter_mut().zip(&g).for_each(|(a, x)| *a += wgt * x);
                loss.policy += wgt * l.policy;
                loss.value += wgt * l.value;
                loss.entropy += wgt * l.entropy;
                loss.total += wgt * l.total;
                loss.approx_kl += wgt * l.approx_kl;
                loss.clip_fraction += wgt * l.clip_fraction;
            }
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    step: steps,
                    what: "loss or gradient",
                });
            }
            grad_norm_sum += clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.step(policy.net.params_mut(), &grad, cfg.learning_rate);
            if policy.net.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    step: steps,
                    what: "parameters",
                });
            }
            loss_sum.policy += loss.policy;
            loss_sum.value += loss.value;
            loss_sum.entropy += loss.entropy;
            loss_sum.total += loss.total;
            loss_sum.approx_kl += loss.approx_kl;
            loss_sum.clip_fraction += loss.clip_fraction;
            count += 1;
        }
    }
    let k = count.max(1) as f64;
    Ok(UpdateStats {
        update: 0,
        steps,
        loss: LossTerms {
            policy: loss_sum.policy / k,
            value: loss_sum.value / k,
            entropy: loss_sum.entropy / k,
            total: loss_sum.total / k,
            approx_kl: loss_sum.approx_kl / k,
            clip_fraction: loss_sum.clip_fraction / k,
        },
        grad_norm: grad_norm_sum / k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            total_steps: 64,
            workers: 2,
            seed: 7,
            ppo: PpoConfig {
                rollout: 16,
                minibatch: 16,
                epochs: 1,
                ..PpoConfig::default()
            },
            obs: ObservationConfig {
                k: 3,
                n: 2,
                ..ObservationConfig::default()
            },
            env: EnvConfig {
                max_steps: 20,
                ..EnvConfig::default()
            },
            network: NetworkSize::Custom {
                conv: vec![2],
                hidden: vec![8],
            },
        }
    }

    fn arena() -> Vec<ScenarioConfig> {
        vec![ScenarioConfig::builtin("empty-arena").unwrap()]
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut cfg = tiny_cfg();
        cfg.ppo.learning_rate = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let initial = Policy::new(&cfg.network, cfg.obs, &cfg.env.limits, &mut rng).unwrap();
        let report = train(&arena(), &cfg).unwrap();
        assert_eq!(report.policy.net.params(), initial.net.params());
        assert_eq!(report.steps, 64);
        assert_eq!(report.updates.len(), 2);
    }

    #[test]
    fn same_seed_same_result() {
        let cfg = tiny_cfg();
        let a = train(&arena(), &cfg).unwrap();
        let b = train(&arena(), &cfg).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn curve_csv_has_header() {
        let report = train(&arena(), &tiny_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        report.write_curve(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("step,episode,worker,scenario,episode_reward"));
    }
}
