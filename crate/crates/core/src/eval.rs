//! Frozen-policy evaluation and message interventions.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{decide, AgentBundle, AgentCondition};
use crate::cpc::JointMessage;
use crate::env::{Env, EnvKind, InformedAgent};
use crate::error::{ensure, Result};
use crate::rng::{stream, tag, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    #[default]
    None,
    /// Every block replaced by a uniformly random one-hot.
    #[serde(rename = "random")]
    RandomMessage,
    /// Every block replaced by the all-zero vector.
    #[serde(rename = "zero")]
    ZeroMessage,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [
        AblationMode::None,
        AblationMode::RandomMessage,
        AblationMode::ZeroMessage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::None => "none",
            AblationMode::RandomMessage => "random",
            AblationMode::ZeroMessage => "zero",
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AblationMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| crate::Error::contract(format!("unknown ablation mode `{s}`")))
    }
}

pub fn apply_ablation<R: Rng + ?Sized>(
    mode: AblationMode,
    joint: &JointMessage,
    rng: &mut R,
) -> JointMessage {
    let k = joint.k();
    let n = joint.n_agents();
    match mode {
        AblationMode::None => joint.clone(),
        AblationMode::ZeroMessage => JointMessage::zeros(n, k),
        AblationMode::RandomMessage => {
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            JointMessage::from_indices(&idx, k).expect("indices drawn inside the vocabulary")
        }
    }
}

/// Row-wise [`apply_ablation`] on a lanes × N·K batch, lane `l` using `rngs[l]`.
pub fn ablate_rows<R: Rng>(
    mode: AblationMode,
    joint: &Array2<f64>,
    k: usize,
    rngs: &mut [R],
) -> Array2<f64> {
    let mut out = joint.clone();
    match mode {
        AblationMode::None => {}
        AblationMode::ZeroMessage => out.fill(0.0),
        AblationMode::RandomMessage => {
            let n = joint.ncols() / k;
            out.fill(0.0);
            for (l, rng) in rngs.iter_mut().enumerate() {
                for a in 0..n {
                    out[[l, a * k + rng.gen_range(0..k)]] = 1.0;
                }
            }
        }
    }
    out
}

/// Metrics at one evaluation point of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub iteration: usize,
    pub env_steps: u64,
    pub episodes: u64,
    pub condition: AgentCondition,
    pub env: EnvKind,
    pub agent_returns: Vec<f64>,
    /// Sum of `agent_returns`.
    pub welfare: f64,
    pub episode_length: f64,
}

/// Outcome of a batch of evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Per-episode return of every agent, `[episode][agent]`.
    pub returns: Vec<Vec<f64>>,
    pub lengths: Vec<usize>,
}

impl EvalResult {
    pub fn episode_welfare(&self) -> Vec<f64> {
        self.returns.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn mean_returns(&self) -> Vec<f64> {
        let n = self.returns.len() as f64;
        let agents = self.returns.first().map_or(0, Vec::len);
        (0..agents)
            .map(|a| self.returns.iter().map(|r| r[a]).sum::<f64>() / n)
            .collect()
    }

    pub fn mean_length(&self) -> f64 {
        self.lengths.iter().sum::<usize>() as f64 / self.lengths.len() as f64
    }

    pub fn record(
        &self,
        seed: u64,
        iteration: usize,
        env_steps: u64,
        episodes: u64,
        condition: AgentCondition,
        env: EnvKind,
    ) -> RunRecord {
        let agent_returns = self.mean_returns();
        RunRecord {
            seed,
            iteration,
            env_steps,
            episodes,
            condition,
            env,
            welfare: agent_returns.iter().sum(),
            agent_returns,
            episode_length: self.mean_length(),
        }
    }
}

/// Runs `episodes` episodes with sampled policies and no learning. Episode
/// `e` draws from its own stream keyed by `(seed, round, e)`, so results do
/// not depend on how episodes are batched.
pub fn evaluate(
    bundles: &[AgentBundle],
    env: EnvKind,
    informed: InformedAgent,
    episodes: usize,
    ablation: AblationMode,
    seed: u64,
    round: u64,
) -> Result<EvalResult> {
    ensure!(episodes >= 1, "evaluation needs at least one episode");
    ensure!(
        ablation == AblationMode::None || bundles.iter().all(|b| b.condition().communicates()),
        "message ablation needs a communicating condition"
    );
    let n_agents = bundles.len();
    let dims = env.obs_dims();
    let mut envs: Vec<Env> = Vec::with_capacity(episodes);
    let mut rngs: Vec<StreamRng> = Vec::with_capacity(episodes);
    let mut obs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut env_rng = stream(seed, &[tag::EVAL, round, e as u64, tag::ENV]);
        let mut ev = Env::new(env, informed);
        obs.push(ev.reset(&mut env_rng));
        envs.push(ev);
        rngs.push(stream(seed, &[tag::EVAL, round, e as u64, tag::AGENT]));
    }
    let mut lanes: Vec<usize> = (0..episodes).collect();
    let mut returns = vec![vec![0.0; n_agents]; episodes];
    let mut lengths = vec![0; episodes];
    while !lanes.is_empty() {
        let batch: Vec<Array2<f64>> = (0..n_agents)
            .map(|a| Array2::from_shape_fn((lanes.len(), dims[a]), |(l, j)| obs[lanes[l]][a][j]))
            .collect();
        let step = decide(bundles, &batch, ablation, &mut rngs)?;
        let mut keep = Vec::with_capacity(lanes.len());
        for (l, &e) in lanes.iter().enumerate() {
            let actions: Vec<usize> = step.agents.iter().map(|s| s.actions[l]).collect();
            let res = envs[e].step(&actions)?;
            for (a, r) in res.rewards.iter().enumerate() {
                returns[e][a] += r;
            }
            obs[e] = res.observations;
            match res.episode_length {
                Some(len) => lengths[e] = len,
                None => keep.push(l),
            }
        }
        if keep.len() < lanes.len() {
            let mut it = keep.iter().peekable();
            let old = std::mem::take(&mut rngs);
            rngs = old
                .into_iter()
                .enumerate()
                .filter_map(|(l, r)| (it.next_if_eq(&&l).is_some()).then_some(r))
                .collect();
            lanes = keep.iter().map(|&l| lanes[l]).collect();
        }
    }
    Ok(EvalResult { returns, lengths })
}
