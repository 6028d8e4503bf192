//! Learned planner: the network, PPO training and checkpoints.

mod checkpoint;
mod network;
mod ppo;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{ForwardCache, Network, NetworkSpec, Output};
pub use ppo::{
    clip_grad_norm, gae, log_softmax, normalize, ppo_loss, ppo_loss_and_grad, Adam, LossTerms,
    Minibatch, PpoConfig,
};
pub use train::{
    train, train_with_callback, CurveRow, NetworkSize, TrainConfig, TrainReport, UpdateStats,
};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{RobotLimits, VelocityPair};
use crate::error::{Error, Result};
use crate::observation::{NormScales, ObservationBlock, ObservationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    /// Highest probability; ties go to the lowest index.
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionChoice {
    pub index: usize,
    pub command: VelocityPair,
    pub log_prob: f64,
    pub value: f64,
}

/// A network bound to the observation settings it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Network,
    pub obs: ObservationConfig,
    pub scales: NormScales,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(
        size: &NetworkSize,
        obs: ObservationConfig,
        limits: &RobotLimits,
        rng: &mut R,
    ) -> Result<Self> {
        obs.validate()?;
        let spec = size.spec(&obs);
        Ok(Self {
            net: Network::new(spec, rng)?,
            obs,
            scales: NormScales::new(limits, &obs),
        })
    }

    pub fn input(&self, block: &ObservationBlock) -> Result<Vec<f64>> {
        let spec = self.net.spec();
        if block.rows() != spec.height {
            return Err(Error::Dimension {
                what: "observation rows",
                expected: spec.height,
                actual: block.rows(),
            });
        }
        if block.columns() != spec.width {
            return Err(Error::Dimension {
                what: "observation columns",
                expected: spec.width,
                actual: block.columns(),
            });
        }
        Ok(block.policy_input(&self.scales, self.obs.layout))
    }

    /// Action log-probabilities `[batch, actions]` and values for stacked inputs.
    pub fn evaluate(&self, inputs: &[f64], batch: usize) -> Result<(Array2<f64>, Vec<f64>)> {
        let out = self.net.forward(inputs, batch)?;
        Ok((log_softmax(&out.logits), out.values.to_vec()))
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        block: &ObservationBlock,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<ActionChoice> {
        let input = self.input(block)?;
        let (logp, values) = self.evaluate(&input, 1)?;
        let row: Vec<f64> = logp.row(0).to_vec();
        let index = choose(&row, mode, rng);
        Ok(ActionChoice {
            index,
            command: block.action_map[index],
            log_prob: row[index],
            value: values[0],
        })
    }
}

/// Picks an index from a row of log-probabilities.
pub fn choose<R: Rng + ?Sized>(log_probs: &[f64], mode: ActMode, rng: &mut R) -> usize {
    match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for (i, &lp) in log_probs.iter().enumerate() {
                if lp > log_probs[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &lp) in log_probs.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    return i;
                }
            }
            log_probs.len() - 1
        }
    }
}
