use ndarray::{concatenate, Array2, Axis};

use crate::agents::{decide, AgentBundle};
use crate::env::{Env, EnvKind, InformedAgent};
use crate::error::Result;
use crate::eval::AblationMode;
use crate::rng::{stream, tag, StreamRng};

/// One agent's share of a rollout, rows ordered worker-major
/// (`row = worker * steps + t`).
#[derive(Debug, Clone)]
pub struct AgentBatch {
    pub obs: Array2<f64>,
    pub inputs: Array2<f64>,
    /// Sampled joint messages, for the CPC term.
    pub joint: Option<Array2<f64>>,
    /// Own sent messages.
    pub messages: Option<Vec<usize>>,
    pub actions: Vec<usize>,
    pub logp_old: Vec<f64>,
    pub values_old: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Filled by advantage estimation.
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

impl AgentBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub agents: Vec<AgentBatch>,
    pub workers: usize,
    pub steps: usize,
    /// `V` of the state after each worker's last step, `[agent][worker]`.
    pub bootstrap: Vec<Vec<f64>>,
    /// Returns of episodes that finished during collection, `[episode][agent]`.
    pub finished: Vec<Vec<f64>>,
}

/// Lockstep environment workers. Each worker owns an environment and two
/// random streams (environment, agents); episodes continue across calls.
pub struct Collector {
    envs: Vec<Env>,
    env_rngs: Vec<StreamRng>,
    agent_rngs: Vec<StreamRng>,
    obs: Vec<Vec<Vec<f64>>>,
    running: Vec<Vec<f64>>,
    obs_dims: [usize; 2],
    pub env_steps: u64,
    pub episodes: u64,
}

impl Collector {
    pub fn new(env: EnvKind, informed: InformedAgent, workers: usize, seed: u64) -> Self {
        let mut envs = Vec::with_capacity(workers);
        let mut env_rngs = Vec::with_capacity(workers);
        let mut obs = Vec::with_capacity(workers);
        for w in 0..workers {
            let mut r = stream(seed, &[tag::ENV, w as u64]);
            let mut e = Env::new(env, informed);
            obs.push(e.reset(&mut r));
            envs.push(e);
            env_rngs.push(r);
        }
        Self {
            envs,
            env_rngs,
            agent_rngs: (0..workers)
                .map(|w| stream(seed, &[tag::AGENT, w as u64]))
                .collect(),
            obs,
            running: vec![vec![0.0; 2]; workers],
            obs_dims: env.obs_dims(),
            env_steps: 0,
            episodes: 0,
        }
    }

    fn obs_batch(&self) -> Vec<Array2<f64>> {
        (0..self.obs_dims.len())
            .map(|a| {
                Array2::from_shape_fn((self.envs.len(), self.obs_dims[a]), |(w, j)| {
                    self.obs[w][a][j]
                })
            })
            .collect()
    }

    pub fn collect(&mut self, bundles: &[AgentBundle], steps: usize) -> Result<RolloutBatch> {
        let workers = self.envs.len();
        let n = bundles.len();
        let rows = workers * steps;
        let row = |w: usize, t: usize| w * steps + t;
        let mut obs_rows: Vec<Vec<Array2<f64>>> = vec![Vec::with_capacity(steps); n];
        let mut input_rows: Vec<Vec<Array2<f64>>> = vec![Vec::with_capacity(steps); n];
        let mut joint_rows: Vec<Array2<f64>> = Vec::with_capacity(steps);
        let mut messages = vec![vec![0usize; rows]; n];
        let mut actions = vec![vec![0usize; rows]; n];
        let mut logp = vec![vec![0.0; rows]; n];
        let mut values = vec![vec![0.0; rows]; n];
        let mut rewards = vec![vec![0.0; rows]; n];
        let mut dones = vec![vec![false; rows]; n];
        let mut finished = Vec::new();

        for t in 0..steps {
            let obs = self.obs_batch();
            let step = decide(bundles, &obs, AblationMode::None, &mut self.agent_rngs)?;
            for (a, s) in step.agents.iter().enumerate() {
                for w in 0..workers {
                    actions[a][row(w, t)] = s.actions[w];
                    logp[a][row(w, t)] = s.logp[w];
                    values[a][row(w, t)] = s.values[w];
                    if let Some(m) = &s.messages {
                        messages[a][row(w, t)] = m[w];
                    }
                }
                input_rows[a].push(s.inputs.clone());
                obs_rows[a].push(obs[a].clone());
            }
            if let Some(j) = step.joint {
                joint_rows.push(j);
            }
            for w in 0..workers {
                let acts: Vec<usize> = step.agents.iter().map(|s| s.actions[w]).collect();
                let res = self.envs[w].step(&acts)?;
                self.env_steps += 1;
                for a in 0..n {
                    rewards[a][row(w, t)] = res.rewards[a];
                    dones[a][row(w, t)] = res.done;
                    self.running[w][a] += res.rewards[a];
                }
                if res.done {
                    self.episodes += 1;
                    finished.push(std::mem::replace(&mut self.running[w], vec![0.0; n]));
                    self.obs[w] = self.envs[w].reset(&mut self.env_rngs[w]);
                } else {
                    self.obs[w] = res.observations;
                }
            }
        }

        let tail = decide(
            bundles,
            &self.obs_batch(),
            AblationMode::None,
            &mut self.agent_rngs,
        )?;
        let bootstrap = tail.agents.iter().map(|s| s.values.clone()).collect();

        // step-major blocks to worker-major rows
        let reorder = |blocks: &[Array2<f64>]| -> Array2<f64> {
            let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
            let stacked = concatenate(Axis(0), &views).expect("rollout blocks share width");
            let cols = stacked.ncols();
            Array2::from_shape_fn((rows, cols), |(r, c)| {
                let (w, t) = (r / steps, r % steps);
                stacked[[t * workers + w, c]]
            })
        };
        let joint = (!joint_rows.is_empty()).then(|| reorder(&joint_rows));
        let communicates = bundles[0].condition().communicates();
        let agents = (0..n)
            .map(|a| AgentBatch {
                obs: reorder(&obs_rows[a]),
                inputs: reorder(&input_rows[a]),
                joint: joint.clone(),
                messages: communicates.then(|| messages[a].clone()),
                actions: actions[a].clone(),
                logp_old: logp[a].clone(),
                values_old: values[a].clone(),
                rewards: rewards[a].clone(),
                dones: dones[a].clone(),
                advantages: Vec::new(),
                targets: Vec::new(),
            })
            .collect();
        Ok(RolloutBatch {
            agents,
            workers,
            steps,
            bootstrap,
            finished,
        })
    }
}
