use rand::Rng;

use super::{onehot, StepResult};
use crate::error::{ensure, Result};

pub const GRID: usize = 4;
pub const N_CELLS: usize = GRID * GRID;
pub const MAX_STEPS: usize = 1000;

const FOUND: f64 = 1.0;
const PENALTY: f64 = -0.01;

/// Agent B's action set. Agent A has the single action 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObserverAction {
    Up,
    Down,
    Left,
    Right,
    Stand,
    Dig,
}

impl ObserverAction {
    pub const COUNT: usize = 6;

    pub fn from_index(i: usize) -> Result<Self> {
        Ok(match i {
            0 => Self::Up,
            1 => Self::Down,
            2 => Self::Left,
            3 => Self::Right,
            4 => Self::Stand,
            5 => Self::Dig,
            _ => {
                return Err(crate::Error::contract(format!(
                    "observer action {i} out of range"
                )))
            }
        })
    }
}

/// Cell index after applying `action` at `pos`; moves off the grid leave the
/// agent in place. Cells are row-major, `index = 4 * row + col`, row 0 on top.
pub fn moved(pos: usize, action: ObserverAction) -> usize {
    let (r, c) = (pos / GRID, pos % GRID);
    let (r, c) = match action {
        ObserverAction::Up => (r.saturating_sub(1), c),
        ObserverAction::Down => ((r + 1).min(GRID - 1), c),
        ObserverAction::Left => (r, c.saturating_sub(1)),
        ObserverAction::Right => (r, (c + 1).min(GRID - 1)),
        ObserverAction::Stand | ObserverAction::Dig => (r, c),
    };
    r * GRID + c
}

/// Agent A sees where the reward is buried; agent B sees where it stands and
/// must walk there and dig.
#[derive(Debug, Clone)]
pub struct ObserverEnv {
    pub max_steps: usize,
    reward_cell: usize,
    pos: usize,
    steps: usize,
}

impl Default for ObserverEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl ObserverEnv {
    pub fn new() -> Self {
        Self {
            max_steps: MAX_STEPS,
            reward_cell: 0,
            pos: 0,
            steps: 0,
        }
    }

    pub fn reward_cell(&self) -> usize {
        self.reward_cell
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn step_count(&self) -> usize {
        self.steps
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        let reward_cell = rng.gen_range(0..N_CELLS);
        let pos = rng.gen_range(0..N_CELLS);
        self.set(reward_cell, pos)
    }

    pub fn set(&mut self, reward_cell: usize, pos: usize) -> Vec<Vec<f64>> {
        assert!(reward_cell < N_CELLS && pos < N_CELLS);
        self.reward_cell = reward_cell;
        self.pos = pos;
        self.steps = 0;
        self.observations()
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        vec![onehot(N_CELLS, self.reward_cell), onehot(N_CELLS, self.pos)]
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        ensure!(
            actions.len() == 2,
            "observer expects 2 actions, got {}",
            actions.len()
        );
        ensure!(
            actions[0] == 0,
            "agent A has a single action, got {}",
            actions[0]
        );
        ensure!(
            self.steps < self.max_steps,
            "step called on a finished episode"
        );
        let action = ObserverAction::from_index(actions[1])?;
        self.steps += 1;
        let found = action == ObserverAction::Dig && self.pos == self.reward_cell;
        self.pos = moved(self.pos, action);
        let done = found || self.steps >= self.max_steps;
        Ok(StepResult {
            observations: self.observations(),
            rewards: vec![0.0, if found { FOUND } else { PENALTY }],
            done,
            episode_length: done.then_some(self.steps),
        })
    }
}
