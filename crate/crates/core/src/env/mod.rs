//! Two-agent environments with factorized observations and per-agent rewards.

mod bandit;
mod observer;

pub use bandit::{BanditEnv, BanditState, InformedAgent, LEFT, RIGHT};
pub use observer::{moved, ObserverAction, ObserverEnv, GRID, MAX_STEPS, N_CELLS};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Number of agents in every environment here.
pub const N_AGENTS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: bool,
    /// Set on the terminal step.
    pub episode_length: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Bandit,
    BanditCoop,
    Observer,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Bandit => "bandit",
            EnvKind::BanditCoop => "bandit-coop",
            EnvKind::Observer => "observer",
        }
    }

    pub fn is_bandit(self) -> bool {
        !matches!(self, EnvKind::Observer)
    }

    pub fn obs_dims(self) -> [usize; N_AGENTS] {
        match self {
            EnvKind::Bandit | EnvKind::BanditCoop => [2, 2],
            EnvKind::Observer => [N_CELLS, N_CELLS],
        }
    }

    pub fn n_actions(self) -> [usize; N_AGENTS] {
        match self {
            EnvKind::Bandit | EnvKind::BanditCoop => [2, 2],
            EnvKind::Observer => [1, ObserverAction::COUNT],
        }
    }

    /// Message vocabulary used when the config does not override it.
    pub fn default_k(self) -> usize {
        match self {
            EnvKind::Bandit | EnvKind::BanditCoop => 5,
            EnvKind::Observer => 20,
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Closed set of environments behind one reset/step interface.
#[derive(Debug, Clone)]
pub enum Env {
    Bandit(BanditEnv),
    Observer(ObserverEnv),
}

impl Env {
    pub fn new(kind: EnvKind, informed: InformedAgent) -> Self {
        match kind {
            EnvKind::Bandit => Env::Bandit(BanditEnv::new(false, informed)),
            EnvKind::BanditCoop => Env::Bandit(BanditEnv::new(true, informed)),
            EnvKind::Observer => Env::Observer(ObserverEnv::new()),
        }
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        match self {
            Env::Bandit(e) => e.reset(rng),
            Env::Observer(e) => e.reset(rng),
        }
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        match self {
            Env::Bandit(e) => e.step(actions),
            Env::Observer(e) => e.step(actions),
        }
    }
}

pub(crate) fn onehot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}
