//! Clipped-surrogate PPO loss, its analytic gradient, GAE and Adam.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Steps collected per worker between updates.
    pub rollout: usize,
    /// Rewards are multiplied by this before advantage estimation.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            learning_rate: 2.5e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            epochs: 4,
            minibatch: 64,
            rollout: 128,
            reward_scale: 0.01,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(Error::Config("gamma and lambda must lie in [0, 1]".into()));
        }
        if !(self.clip > 0.0) || !(self.learning_rate >= 0.0) || !(self.reward_scale > 0.0) {
            return Err(Error::Config("clip and reward scale must be positive, learning rate non-negative".into()));
        }
        if !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::Config("loss coefficients must be non-negative".into()));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout == 0 {
            return Err(Error::Config("epochs, minibatch and rollout must be positive".into()));
        }
        Ok(())
    }
}

/// Generalized advantage estimation over one worker's trajectory.
///
/// `dones[t]` marks that the episode ended at step `t`; `next_value` is the
/// critic's estimate for the state after the last step. Returns
/// `(advantages, returns)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    next_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae inputs differ in length");
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_v, mask) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 < n {
            (values[t + 1], 1.0)
        } else {
            (next_value, 1.0)
        };
        let delta = rewards[t] + gamma * next_v * mask - values[t];
        running = delta + gamma * lambda * mask * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// A batch of transitions; `inputs` holds `len` flattened observations.
#[derive(Debug, Clone, Copy)]
pub struct Minibatch<'a> {
    pub inputs: &'a [f64],
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

impl Minibatch<'_> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Log-softmax of each row.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|z| z - lse);
    }
    out
}

pub fn ppo_loss(net: &Network, mb: &Minibatch<'_>, cfg: &PpoConfig) -> Result<LossTerms> {
    loss_impl(net, mb, cfg, false).map(|(l, _)| l)
}

/// Mean loss over the batch together with its gradient.
pub fn ppo_loss_and_grad(net: &Network, mb: &Minibatch<'_>, cfg: &PpoConfig) -> Result<(LossTerms, Vec<f64>)> {
    loss_impl(net, mb, cfg, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

fn loss_impl(
    net: &Network,
    mb: &Minibatch<'_>,
    cfg: &PpoConfig,
    with_grad: bool,
) -> Result<(LossTerms, Option<Vec<f64>>)> {
    let b = mb.len();
    for (what, len) in [
        ("old log-probs", mb.old_log_probs.len()),
        ("advantages", mb.advantages.len()),
        ("returns", mb.returns.len()),
    ] {
        if len != b {
            return Err(Error::Dimension {
                what,
                expected: b,
                actual: len,
            });
        }
    }
    let actions = net.spec().actions;
    if let Some(&a) = mb.actions.iter().find(|&&a| a >= actions) {
        return Err(Error::Dimension {
            what: "action index",
            expected: actions,
            actual: a,
        });
    }
    let (out, cache) = net.forward_cached(mb.inputs, b)?;
    let logp_all = log_softmax(&out.logits);
    let inv_b = 1.0 / b as f64;
    let mut terms = LossTerms::default();
    let mut d_out = Array2::zeros((b, actions + 1));
    for i in 0..b {
        let a = mb.actions[i];
        let adv = mb.advantages[i];
        let logp = logp_all[[i, a]];
        let ratio = (logp - mb.old_log_probs[i]).exp();
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let (s1, s2) = (ratio * adv, clipped * adv);
        terms.policy -= s1.min(s2) * inv_b;
        if (ratio - 1.0).abs() > cfg.clip {
            terms.clip_fraction += inv_b;
        }
        terms.approx_kl += (mb.old_log_probs[i] - logp) * inv_b;

        let row = logp_all.row(i);
        let entropy: f64 = -row.iter().map(|&lp| lp.exp() * lp).sum::<f64>();
        terms.entropy += entropy * inv_b;

        let v_err = out.values[i] - mb.returns[i];
        terms.value += 0.5 * v_err * v_err * inv_b;

        if with_grad {
            // d(-min)/d logp is -ratio·A on the unclipped branch, 0 otherwise
            let d_logp = if s1 <= s2 { -ratio * adv } else { 0.0 };
            for j in 0..actions {
                let p = row[j].exp();
                let onehot = if j == a { 1.0 } else { 0.0 };
                let d_pi = d_logp * (onehot - p);
                let d_ent = cfg.entropy_coef * p * (row[j] + entropy);
                d_out[[i, j]] = (d_pi + d_ent) * inv_b;
            }
            d_out[[i, actions]] = cfg.value_coef * v_err * inv_b;
        }
    }
    terms.total = terms.policy + cfg.value_coef * terms.value - cfg.entropy_coef * terms.entropy;
    let grad = with_grad.then(|| net.backward(&cache, &d_out));
    Ok((terms, grad))
}

/// Scales `grad` so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Subtracts the mean and divides by the standard deviation.
pub fn normalize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::network::NetworkSpec;
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gae_with_lambda_one_gives_discounted_returns() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, 0.5, 0.5];
        let (adv, ret) = gae(&r, &v, &[false, false, false], 4.0, 0.9, 1.0);
        let g2 = 3.0 + 0.9 * 4.0;
        let g1 = 2.0 + 0.9 * g2;
        let g0 = 1.0 + 0.9 * g1;
        assert_abs_diff_eq!(ret[0], g0, epsilon = 1e-12);
        assert_abs_diff_eq!(ret[2], g2, epsilon = 1e-12);
        assert_abs_diff_eq!(adv[1], g1 - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn gae_stops_at_episode_boundary() {
        let (adv, _) = gae(&[1.0, 10.0], &[0.0, 0.0], &[true, false], 100.0, 0.99, 0.95);
        assert_abs_diff_eq!(adv[0], 1.0);
    }

    #[test]
    fn gae_lambda_zero_is_one_step_td() {
        let (adv, _) = gae(&[1.0, 1.0], &[2.0, 3.0], &[false, false], 5.0, 0.5, 0.0);
        assert_abs_diff_eq!(adv[0], 1.0 + 0.5 * 3.0 - 2.0);
        assert_abs_diff_eq!(adv[1], 1.0 + 0.5 * 5.0 - 3.0);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(2);
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.1], 0.01);
        assert_abs_diff_eq!(p[0], 0.99, epsilon = 1e-6);
        assert_abs_diff_eq!(p[1], -0.99, epsilon = 1e-6);
        let before = p;
        opt.step(&mut p, &[1.0, 1.0], 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn clip_grad_norm_caps_length() {
        let mut g = [3.0, 4.0];
        assert_abs_diff_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert_abs_diff_eq!(g[0], 0.6);
        let mut small = [0.1, 0.0];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, [0.1, 0.0]);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let spec = NetworkSpec {
            height: 4,
            width: 2,
            channels: 3,
            conv: vec![4],
            hidden: vec![6],
            actions: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Network::new(spec.clone(), &mut rng).unwrap();
        let b = 5;
        let inputs: Vec<f64> = (0..b * spec.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let actions: Vec<usize> = (0..b).map(|i| i % 4).collect();
        // old log-probs near the current ones so both clip branches are exercised
        let lp = log_softmax(&net.forward(&inputs, b).unwrap().logits);
        let old: Vec<f64> = (0..b).map(|i| lp[[i, actions[i]]] + [0.0, 0.5, -0.5, 0.05, -0.3][i]).collect();
        let adv = [1.0, -0.7, 0.4, -1.2, 0.9];
        let ret = [0.3, -0.2, 1.0, 0.0, 0.5];
        let cfg = PpoConfig::default();
        let mb = Minibatch {
            inputs: &inputs,
            actions: &actions,
            old_log_probs: &old,
            advantages: &adv,
            returns: &ret,
        };
        let (_, grad) = ppo_loss_and_grad(&net, &mb, &cfg).unwrap();
        let eps = 1e-6;
        let (mut num, mut den) = (0.0, 0.0);
        for p in 0..net.params().len() {
            let orig = net.params()[p];
            net.params_mut()[p] = orig + eps;
            let up = ppo_loss(&net, &mb, &cfg).unwrap().total;
            net.params_mut()[p] = orig - eps;
            let down = ppo_loss(&net, &mb, &cfg).unwrap().total;
            net.params_mut()[p] = orig;
            let fd = (up - down) / (2.0 * eps);
            num += (fd - grad[p]).powi(2);
            den += fd.powi(2).max(grad[p].powi(2));
        }
        assert!((num / den).sqrt() < 1e-5);
    }

    #[test]
    fn out_of_range_action_rejected() {
        let spec = NetworkSpec {
            height: 2,
            width: 1,
            channels: 3,
            conv: vec![],
            hidden: vec![3],
            actions: 2,
        };
        let net = Network::new(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mb = Minibatch {
            inputs: &[0.0; 6],
            actions: &[2],
            old_log_probs: &[0.0],
            advantages: &[0.0],
            returns: &[0.0],
        };
        assert!(ppo_loss(&net, &mb, &PpoConfig::default()).is_err());
    }
}
