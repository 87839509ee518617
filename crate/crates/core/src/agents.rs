//! Agent architectures and the wiring of what each network sees.
//!
//! | condition | policy / value input            |
//! |-----------|---------------------------------|
//! | no-comm   | `x_i`                           |
//! | message   | `x_i` ⊕ incoming messages       |
//! | cpc       | `z_i` ⊕ joint message `m`       |
//! | shared    | `x_0` ⊕ `x_1` ⊕ …               |
//!
//! Every agent owns one [`ParamStore`] holding all of its networks; nothing
//! is shared between agents.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cpc::{onehots, CpcHead, JointMessage, Message, StraightThrough, CPC_HIDDEN};
use crate::diff::{
    log_softmax_rows, Activation, AdamConfig, AdamState, Mlp, ParamStore, Tape, Var,
};
use crate::error::{ensure, Result};
use crate::eval::{ablate_rows, AblationMode};
use crate::rng::sample_categorical;

pub const HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentCondition {
    NoComm,
    #[serde(rename = "message")]
    MessageAction,
    Cpc,
    Shared,
}

impl AgentCondition {
    pub const ALL: [AgentCondition; 4] = [
        AgentCondition::NoComm,
        AgentCondition::MessageAction,
        AgentCondition::Cpc,
        AgentCondition::Shared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentCondition::NoComm => "no-comm",
            AgentCondition::MessageAction => "message",
            AgentCondition::Cpc => "cpc",
            AgentCondition::Shared => "shared",
        }
    }

    pub fn communicates(self) -> bool {
        matches!(self, AgentCondition::MessageAction | AgentCondition::Cpc)
    }
}

impl std::fmt::Display for AgentCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentCondition {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| crate::Error::contract(format!("unknown condition `{s}`")))
    }
}

/// Everything needed to build one agent.
#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub condition: AgentCondition,
    pub index: usize,
    /// Observation widths of all agents, in agent order.
    pub obs_dims: Vec<usize>,
    pub n_actions: usize,
    pub k: usize,
    pub beta: f64,
    pub straight_through: StraightThrough,
    pub adam: AdamConfig,
}

impl AgentSpec {
    pub fn n_agents(&self) -> usize {
        self.obs_dims.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dims[self.index]
    }

    /// Width of the policy and value input.
    pub fn input_dim(&self) -> usize {
        match self.condition {
            AgentCondition::NoComm => self.obs_dim(),
            AgentCondition::MessageAction => self.obs_dim() + (self.n_agents() - 1) * self.k,
            AgentCondition::Cpc => CPC_HIDDEN + self.n_agents() * self.k,
            AgentCondition::Shared => self.obs_dims.iter().sum(),
        }
    }

    /// Width of the policy output: action logits, then message logits under
    /// message-as-action.
    pub fn policy_out_dim(&self) -> usize {
        match self.condition {
            AgentCondition::MessageAction => self.n_actions + self.k,
            _ => self.n_actions,
        }
    }
}

#[derive(Debug)]
pub struct AgentBundle {
    pub spec: AgentSpec,
    pub store: ParamStore,
    pub policy: Mlp,
    pub value: Mlp,
    pub cpc: Option<CpcHead>,
    pub optimizer: AdamState,
}

impl Clone for AgentBundle {
    /// Rebuilds the networks against a fresh store, then copies values and
    /// optimizer moments; parameter handles stay bound to their own store.
    fn clone(&self) -> Self {
        let mut out = Self::new(self.spec.clone(), &mut crate::rng::stream(0, &[]))
            .expect("spec was valid when this bundle was built");
        out.store
            .load_values(&self.store)
            .expect("identical layout");
        out.optimizer = self.optimizer.clone();
        out
    }
}

impl AgentBundle {
    pub fn new<R: Rng + ?Sized>(spec: AgentSpec, rng: &mut R) -> Result<Self> {
        ensure!(
            spec.index < spec.n_agents(),
            "agent index {} out of range",
            spec.index
        );
        ensure!(spec.n_actions >= 1, "agent needs at least one action");
        let mut store = ParamStore::new();
        let i = spec.index;
        let input = spec.input_dim();
        let policy = Mlp::new(
            &mut store,
            &format!("agent{i}.policy"),
            &[input, HIDDEN, HIDDEN, spec.policy_out_dim()],
            Activation::Tanh,
            rng,
        )?;
        let value = Mlp::new(
            &mut store,
            &format!("agent{i}.value"),
            &[input, HIDDEN, HIDDEN, 1],
            Activation::Tanh,
            rng,
        )?;
        let cpc = match spec.condition {
            AgentCondition::Cpc => Some(CpcHead::new(
                &mut store,
                &format!("agent{i}.cpc"),
                spec.obs_dim(),
                spec.n_agents(),
                spec.k,
                spec.beta,
                spec.straight_through,
                rng,
            )?),
            _ => None,
        };
        let optimizer = AdamState::new(&store, spec.adam);
        Ok(Self {
            spec,
            store,
            policy,
            value,
            cpc,
            optimizer,
        })
    }

    pub fn index(&self) -> usize {
        self.spec.index
    }

    pub fn condition(&self) -> AgentCondition {
        self.spec.condition
    }

    /// Action probabilities for rows of policy input.
    pub fn action_probs(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        let (out, _) = self.policy.infer(&self.store, inputs)?;
        let a = self.spec.n_actions;
        Ok(log_softmax_rows(&out.slice(s![.., ..a]).to_owned()).mapv(f64::exp))
    }

    /// Message-head input under message-as-action: the own observation with
    /// the incoming slots zeroed, since messages are chosen before any are
    /// received.
    pub fn message_input(&self, obs: &Array2<f64>) -> Array2<f64> {
        let pad = Array2::zeros((obs.nrows(), self.spec.input_dim() - self.spec.obs_dim()));
        concatenate![Axis(1), *obs, pad]
    }

    /// Policy log-probability of the taken actions (plus messages under
    /// message-as-action), its entropy and the value estimate, all B×1.
    pub fn evaluate(
        &self,
        tape: &mut Tape,
        obs: &Array2<f64>,
        inputs: &Array2<f64>,
        actions: &[usize],
        messages: Option<&[usize]>,
    ) -> Result<PolicyTerms> {
        let a = self.spec.n_actions;
        let xin = tape.constant(inputs.clone());
        let out = self.policy.forward(tape, &self.store, xin)?;
        let act_logits = if self.spec.condition == AgentCondition::MessageAction {
            tape.slice_cols(out, 0, a)
        } else {
            out
        };
        let (mut logp, mut entropy) = categorical_terms(tape, act_logits, actions);
        if self.spec.condition == AgentCondition::MessageAction {
            let msgs = messages.ok_or_else(|| {
                crate::Error::contract("message-as-action needs the sent messages")
            })?;
            let min = tape.constant(self.message_input(obs));
            let mout = self.policy.forward(tape, &self.store, min)?;
            let msg_logits = tape.slice_cols(mout, a, a + self.spec.k);
            let (lm, hm) = categorical_terms(tape, msg_logits, msgs);
            logp = tape.add(logp, lm);
            entropy = tape.add(entropy, hm);
        }
        let value = self.value.forward(tape, &self.store, xin)?;
        Ok(PolicyTerms {
            logp,
            entropy,
            value,
        })
    }
}

pub struct PolicyTerms {
    pub logp: Var,
    pub entropy: Var,
    pub value: Var,
}

/// Log-probability of `idx` and entropy for rows of categorical logits.
fn categorical_terms(tape: &mut Tape, logits: Var, idx: &[usize]) -> (Var, Var) {
    let lp = tape.log_softmax(logits);
    let picked = tape.gather(lp, idx);
    let p = tape.exp(lp);
    let plp = tape.mul(p, lp);
    let neg_h = tape.sum_cols(plp);
    (picked, tape.scale(neg_h, -1.0))
}

/// One agent's part of a lockstep decision over L lanes.
#[derive(Debug, Clone)]
pub struct AgentStep {
    pub actions: Vec<usize>,
    /// Own sent message per lane, for communicating conditions.
    pub messages: Option<Vec<usize>>,
    pub logp: Vec<f64>,
    pub values: Vec<f64>,
    /// Policy/value input rows, L×input_dim.
    pub inputs: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct TeamStep {
    pub agents: Vec<AgentStep>,
    /// Joint one-hots as sampled (before any ablation), L×N·K.
    pub joint: Option<Array2<f64>>,
}

/// Builds the joint messages seen by each agent from the sent messages: the
/// full concatenation under cpc, the other agents' blocks under
/// message-as-action.
pub fn message_exchange(condition: AgentCondition, msgs: &[Message]) -> Result<Vec<Vec<f64>>> {
    let joint = JointMessage::from_messages(msgs)?;
    Ok((0..msgs.len())
        .map(|i| match condition {
            AgentCondition::MessageAction => joint.without(i),
            _ => joint.as_slice().to_vec(),
        })
        .collect())
}

/// Message exchange and action selection for all agents on L parallel lanes.
/// `obs[i]` holds agent i's observations (L rows); lane `l` draws all of its
/// randomness from `rngs[l]`.
pub fn decide<R: Rng>(
    bundles: &[AgentBundle],
    obs: &[Array2<f64>],
    ablation: AblationMode,
    rngs: &mut [R],
) -> Result<TeamStep> {
    let n = bundles.len();
    ensure!(
        n > 0 && obs.len() == n,
        "{} observation blocks for {n} agents",
        obs.len()
    );
    let lanes = rngs.len();
    ensure!(
        obs.iter().all(|o| o.nrows() == lanes),
        "observation rows must match lane count"
    );
    let condition = bundles[0].condition();
    ensure!(
        bundles.iter().all(|b| b.condition() == condition),
        "mixed agent conditions"
    );
    let k = bundles[0].spec.k;

    // Message phase.
    let mut sent: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut msg_logp = vec![vec![0.0; lanes]; n];
    let mut z: Vec<Option<Array2<f64>>> = vec![None; n];
    for (i, b) in bundles.iter().enumerate() {
        let probs = match condition {
            AgentCondition::Cpc => {
                let (p, zi) = b
                    .cpc
                    .as_ref()
                    .expect("cpc agent without head")
                    .encode(&b.store, &obs[i])?;
                z[i] = Some(zi);
                p
            }
            AgentCondition::MessageAction => {
                let (out, _) = b.policy.infer(&b.store, &b.message_input(&obs[i]))?;
                let a = b.spec.n_actions;
                log_softmax_rows(&out.slice(s![.., a..]).to_owned()).mapv(f64::exp)
            }
            _ => continue,
        };
        let mut idx = Vec::with_capacity(lanes);
        for (l, rng) in rngs.iter_mut().enumerate() {
            let row = probs.row(l);
            let m = sample_categorical(row.as_slice().unwrap(), rng);
            // only a message-as-action message is part of the policy's choice
            if condition == AgentCondition::MessageAction {
                msg_logp[i][l] = row[m].ln();
            }
            idx.push(m);
        }
        sent[i] = Some(idx);
    }

    let joint = if condition.communicates() {
        let blocks: Vec<Array2<f64>> = sent
            .iter()
            .map(|m| onehots(m.as_ref().unwrap(), k))
            .collect();
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        Some(concatenate(Axis(1), &views).expect("joint blocks share row count"))
    } else {
        None
    };
    let exchanged = match &joint {
        Some(j) if ablation != AblationMode::None => Some(ablate_rows(ablation, j, k, rngs)),
        other => other.clone(),
    };

    // Action phase.
    let mut agents = Vec::with_capacity(n);
    for (i, b) in bundles.iter().enumerate() {
        let inputs = match condition {
            AgentCondition::NoComm => obs[i].clone(),
            AgentCondition::Shared => {
                let views: Vec<_> = obs.iter().map(|o| o.view()).collect();
                concatenate(Axis(1), &views).expect("observations share row count")
            }
            AgentCondition::MessageAction => {
                let j = exchanged.as_ref().unwrap();
                let mut parts = vec![obs[i].view()];
                for other in (0..n).filter(|&o| o != i) {
                    parts.push(j.slice(s![.., other * k..(other + 1) * k]));
                }
                concatenate(Axis(1), &parts).expect("row count")
            }
            AgentCondition::Cpc => {
                concatenate![
                    Axis(1),
                    *z[i].as_ref().unwrap(),
                    *exchanged.as_ref().unwrap()
                ]
            }
        };
        ensure!(
            inputs.ncols() == b.spec.input_dim(),
            "agent {i} input width {} != {}",
            inputs.ncols(),
            b.spec.input_dim()
        );
        let probs = b.action_probs(&inputs)?;
        let (v, _) = b.value.infer(&b.store, &inputs)?;
        let mut actions = Vec::with_capacity(lanes);
        let mut logp = Vec::with_capacity(lanes);
        for (l, rng) in rngs.iter_mut().enumerate() {
            let row = probs.row(l);
            let a = sample_categorical(row.as_slice().unwrap(), rng);
            actions.push(a);
            logp.push(row[a].ln() + msg_logp[i][l]);
        }
        agents.push(AgentStep {
            actions,
            messages: sent[i].take(),
            logp,
            values: v.column(0).to_vec(),
            inputs,
        });
    }
    Ok(TeamStep { agents, joint })
}

/// Builds one bundle per agent with independent initialisation streams.
pub fn build_team(
    condition: AgentCondition,
    obs_dims: &[usize],
    n_actions: &[usize],
    k: usize,
    beta: f64,
    straight_through: StraightThrough,
    adam: AdamConfig,
    seed: u64,
) -> Result<Vec<AgentBundle>> {
    ensure!(
        obs_dims.len() == n_actions.len(),
        "obs_dims and n_actions disagree on agent count"
    );
    (0..obs_dims.len())
        .map(|i| {
            let spec = AgentSpec {
                condition,
                index: i,
                obs_dims: obs_dims.to_vec(),
                n_actions: n_actions[i],
                k,
                beta,
                straight_through,
                adam,
            };
            let mut rng = crate::rng::stream(seed, &[crate::rng::tag::INIT, i as u64]);
            AgentBundle::new(spec, &mut rng)
        })
        .collect()
}
