use serde::{Deserialize, Serialize};

use crate::agents::AgentCondition;
use crate::cpc::StraightThrough;
use crate::diff::AdamConfig;
use crate::env::{EnvKind, InformedAgent};
use crate::error::{ensure, Result};

/// Every knob of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub env: EnvKind,
    pub condition: AgentCondition,
    pub seed: u64,
    /// Message vocabulary size.
    pub k: usize,
    pub beta: f64,
    pub straight_through: StraightThrough,
    pub informed: InformedAgent,
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub minibatches: usize,
    pub epochs: usize,
    pub normalize_advantages: bool,
    /// Parallel environment workers.
    pub workers: usize,
    /// Steps each worker collects per iteration (bandit: episodes).
    pub steps_per_worker: usize,
    /// Episodes (bandit) or environment steps (observer).
    pub budget: u64,
    /// Iterations between evaluations; the last iteration is always evaluated.
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl TrainerConfig {
    /// Defaults for `env`; see the README for which values fill gaps.
    pub fn defaults(env: EnvKind, condition: AgentCondition) -> Self {
        let bandit = env.is_bandit();
        Self {
            env,
            condition,
            seed: 0,
            k: env.default_k(),
            beta: 1.0,
            straight_through: StraightThrough::Elementwise,
            informed: InformedAgent::First,
            learning_rate: if bandit { 3e-4 } else { 2.5e-4 },
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            minibatches: 4,
            epochs: if bandit { 1 } else { 4 },
            normalize_advantages: true,
            workers: 8,
            steps_per_worker: if bandit { 32 } else { 128 },
            budget: if bandit { 30_000 } else { 3_000_000 },
            eval_every: if bandit { 1 } else { 10 },
            eval_episodes: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.k >= 2, "k must be at least 2, got {}", self.k);
        ensure!(
            self.beta >= 0.0 && self.beta.is_finite(),
            "beta must be non-negative"
        );
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be positive"
        );
        ensure!(
            self.gamma > 0.0 && self.gamma <= 1.0,
            "gamma must lie in (0, 1]"
        );
        ensure!(
            self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0,
            "gae_lambda must lie in [0, 1]"
        );
        ensure!(
            self.clip_eps > 0.0 && self.clip_eps < 1.0,
            "clip_eps must lie in (0, 1)"
        );
        ensure!(self.value_coef >= 0.0, "value_coef must be non-negative");
        ensure!(
            self.entropy_coef >= 0.0,
            "entropy_coef must be non-negative"
        );
        ensure!(self.minibatches >= 1, "minibatches must be positive");
        ensure!(self.epochs >= 1, "epochs must be positive");
        ensure!(self.workers >= 1, "workers must be positive");
        ensure!(
            self.steps_per_worker >= 1,
            "steps_per_worker must be positive"
        );
        ensure!(
            self.batch_size() >= self.minibatches,
            "batch of {} cannot be split into {} minibatches",
            self.batch_size(),
            self.minibatches
        );
        ensure!(self.eval_every >= 1, "eval_every must be positive");
        ensure!(self.eval_episodes >= 1, "eval_episodes must be positive");
        Ok(())
    }

    /// Transitions per agent per iteration.
    pub fn batch_size(&self) -> usize {
        self.workers * self.steps_per_worker
    }

    pub fn iterations(&self) -> usize {
        (self.budget / self.batch_size() as u64) as usize
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }
}
