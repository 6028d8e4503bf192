//! Episodic navigation environment wrapping a [`World`], the obstacle history
//! and the reward.

use serde::{Deserialize, Serialize};

use crate::dynamics::{RobotLimits, VelocityPair};
use crate::error::{Error, Result};
use crate::observation::{ObservationBlock, ObservationBuilder, ObservationConfig};
use crate::reward::{assess_obstacles, estimate_obstacles, step_reward, RewardBreakdown, RewardConfig, VelocitySource};
use crate::world::{ObstacleHistory, ScanResult, ScenarioConfig, StepFlags, World, WorldOptions};

/// Default episode length limit.
pub const MAX_EPISODE_STEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub limits: RobotLimits,
    pub world: WorldOptions,
    pub reward: RewardConfig,
    pub max_steps: usize,
    /// Rows kept in the obstacle history.
    pub history: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            limits: RobotLimits::default(),
            world: WorldOptions::default(),
            reward: RewardConfig::default(),
            max_steps: MAX_EPISODE_STEPS,
            history: ObservationConfig::default().n,
        }
    }
}

impl EnvConfig {
    /// Applies the scenario's `[robot]` and `[reward]` overrides.
    pub fn with_scenario_overrides(mut self, scenario: &ScenarioConfig) -> Self {
        if let Some(robot) = scenario.robot {
            self.limits = robot;
        }
        if let Some(reward) = scenario.reward {
            self.reward = reward;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.limits.validate()?;
        self.reward.validate()?;
        if self.max_steps == 0 || self.history == 0 {
            return Err(Error::Config("max_steps and history must be positive".into()));
        }
        if self.world.sensor.beams == 0 || !(self.world.sensor.max_range > 0.0) {
            return Err(Error::Config("sensor needs beams and a positive range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub reward: RewardBreakdown,
    pub flags: StepFlags,
    /// Set when the episode ended with this step.
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone)]
pub struct NavEnv {
    scenario: ScenarioConfig,
    cfg: EnvConfig,
    world: World,
    history: ObstacleHistory,
    steps: usize,
    outcome: Option<Outcome>,
}

impl NavEnv {
    pub fn new(scenario: ScenarioConfig, cfg: EnvConfig, trial_seed: u64) -> Result<Self> {
        cfg.validate()?;
        scenario.validate()?;
        let world = World::from_scenario(&scenario, trial_seed, cfg.limits, cfg.world);
        let mut env = Self {
            history: ObstacleHistory::new(cfg.history),
            scenario,
            cfg,
            world,
            steps: 0,
            outcome: None,
        };
        env.observe_initial()?;
        Ok(env)
    }

    pub fn reset(&mut self, trial_seed: u64) -> Result<()> {
        self.world = World::from_scenario(&self.scenario, trial_seed, self.cfg.limits, self.cfg.world);
        self.history.clear();
        self.steps = 0;
        self.outcome = None;
        self.observe_initial()
    }

    fn observe_initial(&mut self) -> Result<()> {
        let scan = self.world.sense();
        self.history.push(scan)
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn history(&self) -> &ObstacleHistory {
        &self.history
    }

    pub fn latest_scan(&self) -> &ScanResult {
        self.history.newest().expect("history is filled on reset")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn is_done(&self) -> bool {
        self.outcome.is_some()
    }

    /// Observation block for the current state.
    pub fn observation(&self, builder: &ObservationBuilder) -> Result<ObservationBlock> {
        builder.build(self.world.robot, self.world.velocity, &self.history, self.world.goal)
    }

    pub fn step(&mut self, cmd: VelocityPair) -> Result<StepResult> {
        if self.outcome.is_some() {
            return Err(Error::Config("step called on a finished episode".into()));
        }
        if !cmd.is_finite() {
            return Err(Error::Config(format!("non-finite command {cmd:?}")));
        }
        let prev_pose = self.world.robot;
        let flags = self.world.step(cmd);
        let scan = self.world.sense();
        let previous = self.history.newest().cloned();
        self.history.push(scan)?;
        self.steps += 1;

        let rcfg = &self.cfg.reward;
        let p_rob = self.world.robot.position();
        let obstacles = match rcfg.velocity_source {
            VelocitySource::GroundTruth => self.world.disc_snapshots(),
            VelocitySource::ScanEstimate => {
                let current = self.latest_scan();
                let prev = previous.as_ref().unwrap_or(current);
                estimate_obstacles(prev, current, self.cfg.limits.dt, 0.3, 0.5)
            }
        };
        let assessments: Vec<_> = assess_obstacles(p_rob, &obstacles, rcfg)
            .into_iter()
            .filter(|a| a.d_t > 0.0)
            .collect();
        let reward = step_reward(
            prev_pose,
            self.world.robot,
            self.world.goal,
            &assessments,
            flags.collision,
            rcfg,
        );

        let outcome = if flags.collision {
            Some(Outcome::Collision)
        } else if flags.goal_reached {
            Some(Outcome::Success)
        } else if self.steps >= self.cfg.max_steps {
            Some(Outcome::Timeout)
        } else {
            None
        };
        self.outcome = outcome;
        Ok(StepResult {
            reward,
            flags,
            outcome,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(name: &str) -> NavEnv {
        NavEnv::new(ScenarioConfig::builtin(name).unwrap(), EnvConfig::default(), 3).unwrap()
    }

    #[test]
    fn history_is_full_after_reset() {
        let e = env("sparse-dynamic");
        assert_eq!(e.history().len(), EnvConfig::default().history);
    }

    #[test]
    fn standing_still_times_out() {
        let mut e = NavEnv::new(
            ScenarioConfig::builtin("empty-arena").unwrap(),
            EnvConfig {
                max_steps: 5,
                ..EnvConfig::default()
            },
            0,
        )
        .unwrap();
        for _ in 0..4 {
            assert!(e.step(VelocityPair::STOP).unwrap().outcome.is_none());
        }
        assert_eq!(e.step(VelocityPair::STOP).unwrap().outcome, Some(Outcome::Timeout));
        assert!(e.step(VelocityPair::STOP).is_err());
    }

    #[test]
    fn reward_total_is_consistent() {
        let mut e = env("dense-dynamic");
        for _ in 0..20 {
            let r = e.step(VelocityPair::new(0.1, 0.0)).unwrap();
            let b = r.reward;
            assert_eq!(b.total, b.goal + b.collision + b.steering + b.danger);
            if r.outcome.is_some() {
                break;
            }
        }
    }
}
