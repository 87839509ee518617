//! Trainers: collect, estimate advantages, update every agent on its own
//! data, evaluate.

mod config;
mod gae;
mod rollout;
mod update;

pub use config::TrainerConfig;
pub use gae::{compute_gae, GaeResult};
pub use rollout::{AgentBatch, Collector, RolloutBatch};
pub use update::{
    bandit_update, minibatches, normalize, objective, objective_gradcheck, ppo_update,
    ObjectiveTerms, RlObjective, UpdateStats,
};

use crate::agents::{build_team, AgentBundle};
use crate::error::{ensure, Result};
use crate::eval::{evaluate, AblationMode, RunRecord};
use crate::rng::{stream, tag};

/// Fills advantages and value targets of every agent, one GAE pass per
/// worker segment.
pub fn compute_advantages(batch: &mut RolloutBatch, gamma: f64, lambda: f64) -> Result<()> {
    let steps = batch.steps;
    for (a, ab) in batch.agents.iter_mut().enumerate() {
        ab.advantages = vec![0.0; ab.len()];
        ab.targets = vec![0.0; ab.len()];
        for w in 0..batch.workers {
            let seg = w * steps..(w + 1) * steps;
            let mut values = ab.values_old[seg.clone()].to_vec();
            values.push(batch.bootstrap[a][w]);
            let g = compute_gae(
                &ab.rewards[seg.clone()],
                &values,
                &ab.dones[seg.clone()],
                gamma,
                lambda,
            )?;
            ab.advantages[seg.clone()].copy_from_slice(&g.advantages);
            ab.targets[seg].copy_from_slice(&g.targets);
        }
    }
    Ok(())
}

pub struct Trainer {
    pub config: TrainerConfig,
    pub bundles: Vec<AgentBundle>,
    collector: Collector,
    iteration: usize,
}

impl Trainer {
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let bundles = build_team(
            config.condition,
            &config.env.obs_dims(),
            &config.env.n_actions(),
            config.k,
            config.beta,
            config.straight_through,
            config.adam(),
            config.seed,
        )?;
        Self::with_bundles(config, bundles)
    }

    /// Continues from existing agents (e.g. a checkpoint).
    pub fn with_bundles(config: TrainerConfig, bundles: Vec<AgentBundle>) -> Result<Self> {
        config.validate()?;
        ensure!(
            bundles.len() == 2,
            "expected 2 agents, got {}",
            bundles.len()
        );
        ensure!(
            bundles
                .iter()
                .all(|b| b.condition() == config.condition && b.spec.k == config.k),
            "agents do not match the configured condition and vocabulary"
        );
        let collector = Collector::new(config.env, config.informed, config.workers, config.seed);
        Ok(Self {
            config,
            bundles,
            collector,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn env_steps(&self) -> u64 {
        self.collector.env_steps
    }

    pub fn evaluate_now(&self) -> Result<RunRecord> {
        let c = &self.config;
        let res = evaluate(
            &self.bundles,
            c.env,
            c.informed,
            c.eval_episodes,
            AblationMode::None,
            c.seed,
            self.iteration as u64,
        )?;
        Ok(res.record(
            c.seed,
            self.iteration,
            self.collector.env_steps,
            self.collector.episodes,
            c.condition,
            c.env,
        ))
    }

    /// Collect one batch and update every agent on it.
    pub fn train_iteration(&mut self) -> Result<Vec<UpdateStats>> {
        let c = self.config.clone();
        let mut batch = self.collector.collect(&self.bundles, c.steps_per_worker)?;
        self.iteration += 1;
        let bandit = c.env.is_bandit();
        if !bandit {
            compute_advantages(&mut batch, c.gamma, c.gae_lambda)?;
        }
        let rl = RlObjective::Ppo {
            clip_eps: c.clip_eps,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
            normalize_advantages: c.normalize_advantages,
        };
        let it = self.iteration as u64;
        self.bundles
            .iter_mut()
            .zip(&batch.agents)
            .enumerate()
            .map(|(a, (bundle, ab))| {
                let mut rng = stream(c.seed, &[tag::SHUFFLE, it, a as u64]);
                if bandit {
                    bandit_update(bundle, ab, c.epochs, c.minibatches, &mut rng)
                } else {
                    ppo_update(bundle, ab, rl, c.epochs, c.minibatches, &mut rng)
                }
            })
            .collect()
    }

    /// Runs to the budget, handing each evaluation record to `sink` as soon
    /// as it exists.
    pub fn run<F>(&mut self, sink: F) -> Result<Vec<RunRecord>>
    where
        F: FnMut(&RunRecord) -> Result<()>,
    {
        self.run_with_hook(sink, |_, _| Ok(()))
    }

    /// Like [`Trainer::run`], also calling `after` with the iteration number
    /// and the agents once every iteration's updates are done.
    pub fn run_with_hook<F, G>(&mut self, mut sink: F, mut after: G) -> Result<Vec<RunRecord>>
    where
        F: FnMut(&RunRecord) -> Result<()>,
        G: FnMut(usize, &[AgentBundle]) -> Result<()>,
    {
        let total = self.config.iterations();
        let mut records = Vec::new();
        let first = self.evaluate_now()?;
        sink(&first)?;
        records.push(first);
        while self.iteration < total {
            let stats = self.train_iteration()?;
            log::debug!(
                "iter {} rl {:?} cpc {:?}",
                self.iteration,
                stats.iter().map(|s| s.rl).collect::<Vec<_>>(),
                stats.iter().map(|s| s.cpc).collect::<Vec<_>>()
            );
            if self.iteration % self.config.eval_every == 0 || self.iteration == total {
                let rec = self.evaluate_now()?;
                log::info!(
                    "{} {} seed {} iter {}/{} welfare {:.3} length {:.1}",
                    self.config.env,
                    self.config.condition,
                    self.config.seed,
                    self.iteration,
                    total,
                    rec.welfare,
                    rec.episode_length
                );
                sink(&rec)?;
                records.push(rec);
            }
            after(self.iteration, &self.bundles)?;
        }
        Ok(records)
    }
}

pub struct TrainOutcome {
    pub bundles: Vec<AgentBundle>,
    pub records: Vec<RunRecord>,
}

/// Trains fresh agents for `config` to its budget.
pub fn run_training<F>(config: &TrainerConfig, sink: F) -> Result<TrainOutcome>
where
    F: FnMut(&RunRecord) -> Result<()>,
{
    let mut trainer = Trainer::new(config.clone())?;
    let records = trainer.run(sink)?;
    Ok(TrainOutcome {
        bundles: trainer.bundles,
        records,
    })
}

#[cfg(test)]
mod tests;
