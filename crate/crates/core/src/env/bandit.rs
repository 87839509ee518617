use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{onehot, StepResult, N_AGENTS};
use crate::error::{ensure, Result};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

const HIT: f64 = 1.0;
const MISS: f64 = -0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BanditState {
    Left,
    Right,
}

impl BanditState {
    pub fn index(self) -> usize {
        match self {
            BanditState::Left => LEFT,
            BanditState::Right => RIGHT,
        }
    }
}

/// Which agent observes the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InformedAgent {
    /// Redrawn uniformly every episode.
    Random,
    #[default]
    #[serde(rename = "0")]
    First,
    #[serde(rename = "1")]
    Second,
}

/// One-step, two-agent contextual bandit.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub cooperative: bool,
    pub informed_mode: InformedAgent,
    state: BanditState,
    informed: usize,
}

impl BanditEnv {
    pub fn new(cooperative: bool, informed_mode: InformedAgent) -> Self {
        Self {
            cooperative,
            informed_mode,
            state: BanditState::Left,
            informed: 0,
        }
    }

    pub fn state(&self) -> BanditState {
        self.state
    }

    pub fn informed(&self) -> usize {
        self.informed
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        let state = if rng.gen_bool(0.5) {
            BanditState::Right
        } else {
            BanditState::Left
        };
        let informed = match self.informed_mode {
            InformedAgent::Random => rng.gen_range(0..N_AGENTS),
            InformedAgent::First => 0,
            InformedAgent::Second => 1,
        };
        self.set(state, informed)
    }

    /// Puts the env in a given episode start and returns the observations.
    pub fn set(&mut self, state: BanditState, informed: usize) -> Vec<Vec<f64>> {
        self.state = state;
        self.informed = informed;
        self.observations()
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        (0..N_AGENTS)
            .map(|a| {
                if a == self.informed {
                    onehot(2, self.state.index())
                } else {
                    vec![0.0; 2]
                }
            })
            .collect()
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        ensure!(
            actions.len() == N_AGENTS,
            "bandit expects {N_AGENTS} actions, got {}",
            actions.len()
        );
        ensure!(
            actions.iter().all(|&a| a < 2),
            "bandit action out of range: {actions:?}"
        );
        let s = self.state.index();
        let rewards = if self.cooperative {
            let r = if actions.iter().all(|&a| a == s) {
                HIT
            } else {
                MISS
            };
            vec![r; N_AGENTS]
        } else {
            actions
                .iter()
                .map(|&a| if a == s { HIT } else { MISS })
                .collect()
        };
        Ok(StepResult {
            observations: self.observations(),
            rewards,
            done: true,
            episode_length: Some(1),
        })
    }
}
