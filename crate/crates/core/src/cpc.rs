//! Collective predictive coding head.
//!
//! Each agent owns a categorical encoder `Q(m_i | x_i)` and a decoder
//! `P(x_i | m)` that reconstructs its own observation from the joint message
//! of all agents. The per-agent objective is the one-sample ELBO term
//!
//! ```text
//! J_cpc = log P(x_i | m) - beta * ((kappa - 1) - ln kappa),   kappa = Q(m_i | x_i) / P(m_i)
//! ```
//!
//! where only the agent's own block of `m` carries gradient (straight-through
//! on the sampled one-hot) and peer blocks are constants.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{softmax_rows, Activation, Mlp, ParamStore, Tape, Var};
use crate::error::{ensure, Result};
use crate::rng::sample_categorical;

/// Width of the encoder/decoder hidden layer (and of `z`).
pub const CPC_HIDDEN: usize = 64;

/// Floor applied to `Q(m_i|x_i)` before forming `kappa`.
pub const PROB_FLOOR: f64 = 1e-8;

/// A sampled discrete message.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub index: usize,
    pub k: usize,
    /// `log Q(m_i | x_i)` at sampling time.
    pub logprob: f64,
}

impl Message {
    pub fn new(index: usize, k: usize, logprob: f64) -> Result<Self> {
        ensure!(index < k, "message index {index} outside vocabulary of {k}");
        ensure!(
            logprob <= 0.0,
            "message log-probability {logprob} is positive"
        );
        Ok(Self { index, k, logprob })
    }

    pub fn onehot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.k];
        v[self.index] = 1.0;
        v
    }
}

/// Fixed-order concatenation of per-agent K-blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMessage {
    k: usize,
    values: Vec<f64>,
}

impl JointMessage {
    /// Concatenates one-hots in agent order.
    pub fn from_indices(indices: &[usize], k: usize) -> Result<Self> {
        ensure!(k > 0, "empty vocabulary");
        let mut values = vec![0.0; indices.len() * k];
        for (a, &m) in indices.iter().enumerate() {
            ensure!(m < k, "agent {a} message {m} outside vocabulary of {k}");
            values[a * k + m] = 1.0;
        }
        Ok(Self { k, values })
    }

    pub fn from_messages(msgs: &[Message]) -> Result<Self> {
        ensure!(!msgs.is_empty(), "joint message needs at least one agent");
        let k = msgs[0].k;
        ensure!(
            msgs.iter().all(|m| m.k == k),
            "inconsistent vocabulary sizes"
        );
        Self::from_indices(&msgs.iter().map(|m| m.index).collect::<Vec<_>>(), k)
    }

    pub fn zeros(n_agents: usize, k: usize) -> Self {
        Self {
            k,
            values: vec![0.0; n_agents * k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_agents(&self) -> usize {
        self.values.len() / self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn block(&self, agent: usize) -> &[f64] {
        &self.values[agent * self.k..(agent + 1) * self.k]
    }

    pub fn block_mut(&mut self, agent: usize) -> &mut [f64] {
        &mut self.values[agent * self.k..(agent + 1) * self.k]
    }

    /// Index of the hot entry of `agent`'s block, if the block is a one-hot.
    pub fn index_of(&self, agent: usize) -> Option<usize> {
        let b = self.block(agent);
        let ones = b.iter().filter(|&&v| v == 1.0).count();
        let zeros = b.iter().filter(|&&v| v == 0.0).count();
        (ones == 1 && zeros == self.k - 1).then(|| b.iter().position(|&v| v == 1.0).unwrap())
    }

    /// Every block except `agent`'s, in order.
    pub fn without(&self, agent: usize) -> Vec<f64> {
        (0..self.n_agents())
            .filter(|&a| a != agent)
            .flat_map(|a| self.block(a).iter().copied())
            .collect()
    }
}

/// How the sampled one-hot is made differentiable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StraightThrough {
    /// `onehot + log Q(.|x) - sg[log Q(.|x)]`: each component receives the
    /// log-probability of its own symbol.
    #[default]
    Elementwise,
    /// `onehot + log Q(m|x) - sg[log Q(m|x)]` with the scalar log-probability
    /// of the sampled symbol broadcast to all K components.
    Broadcast,
}

/// Sampled KL estimate `(kappa - 1) - ln kappa` with `kappa = q / p`.
pub fn kl_estimate(q_prob: f64, p_prob: f64) -> Result<f64> {
    ensure!(
        q_prob > 0.0 && q_prob <= 1.0 && p_prob > 0.0 && p_prob <= 1.0,
        "kl_estimate needs probabilities in (0, 1], got q={q_prob} p={p_prob}"
    );
    let kappa = q_prob / p_prob;
    Ok((kappa - 1.0) - kappa.ln())
}

/// Tape version of [`kl_estimate`] on a column of log-probabilities.
pub fn kl_estimate_node(tape: &mut Tape, logq: Var, p_prob: f64) -> Var {
    let q = tape.exp(logq);
    let q = tape.clamp(q, PROB_FLOOR, 1.0);
    let kappa = tape.scale(q, 1.0 / p_prob);
    let kappa_m1 = tape.offset(kappa, -1.0);
    let ln_kappa = tape.ln(kappa);
    tape.sub(kappa_m1, ln_kappa)
}

/// Differentiable terms of one agent's objective over a batch.
pub struct CpcTerms {
    /// Batch mean of `J_cpc` (to maximise).
    pub objective: Var,
    /// Per-row reconstruction log-likelihood, B×1.
    pub reconstruction: Var,
    /// Per-row KL estimate, B×1.
    pub kl: Var,
    /// Encoder hidden layer, B×64.
    pub z: Var,
}

#[derive(Debug, Clone)]
pub struct CpcHead {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub obs_dim: usize,
    pub n_agents: usize,
    pub k: usize,
    pub beta: f64,
    pub straight_through: StraightThrough,
}

impl CpcHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        obs_dim: usize,
        n_agents: usize,
        k: usize,
        beta: f64,
        straight_through: StraightThrough,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(k >= 2, "message vocabulary must have at least two symbols");
        ensure!(beta >= 0.0, "beta must be non-negative");
        let encoder = Mlp::new(
            store,
            &format!("{name}.encoder"),
            &[obs_dim, CPC_HIDDEN, k],
            Activation::Gelu,
            rng,
        )?;
        let decoder = Mlp::new(
            store,
            &format!("{name}.decoder"),
            &[n_agents * k, CPC_HIDDEN, obs_dim],
            Activation::Gelu,
            rng,
        )?;
        Ok(Self {
            encoder,
            decoder,
            obs_dim,
            n_agents,
            k,
            beta,
            straight_through,
        })
    }

    /// Flat prior probability of any symbol.
    pub fn prior_prob(&self) -> f64 {
        1.0 / self.k as f64
    }

    /// Tape-free encoder pass: (message probabilities, z), both row-per-input.
    pub fn encode(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let (logits, z) = self.encoder.infer(store, x)?;
        Ok((softmax_rows(&logits), z))
    }

    /// Draws one message per row of `x`.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
        rngs: &mut [&mut R],
    ) -> Result<(Vec<Message>, Array2<f64>)> {
        ensure!(rngs.len() == x.nrows(), "one rng per row required");
        let (probs, z) = self.encode(store, x)?;
        let msgs = probs
            .rows()
            .into_iter()
            .zip(rngs.iter_mut())
            .map(|(p, rng)| {
                let p = p.to_vec();
                let index = sample_categorical(&p, &mut **rng);
                Message::new(index, self.k, p[index].ln().min(0.0))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((msgs, z))
    }

    /// Samples `m_i ~ Q(. | x)` and returns it with the encoder's hidden layer.
    pub fn sample_message<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        x: &[f64],
        rng: &mut R,
    ) -> Result<(Message, Vec<f64>)> {
        ensure!(
            x.len() == self.obs_dim,
            "observation has {} entries, expected {}",
            x.len(),
            self.obs_dim
        );
        let xm = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
        let (mut msgs, z) = self.sample_batch(store, &xm, &mut [rng])?;
        Ok((msgs.remove(0), z.row(0).to_vec()))
    }

    /// Encoder forward on the tape: (log Q rows B×K, z B×64).
    pub fn encoder_logprobs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<(Var, Var)> {
        let out = self.encoder.forward_full(tape, store, x)?;
        let logq = tape.log_softmax(out.output);
        Ok((logq, out.hidden.expect("encoder has a hidden layer")))
    }

    /// Differentiable stand-in for the sampled one-hots `indices` (B×K).
    /// Forward value equals the one-hots exactly.
    pub fn straight_through_node(
        &self,
        tape: &mut Tape,
        logq: Var,
        indices: &[usize],
    ) -> (Var, Var) {
        let (b, k) = tape.shape(logq);
        let onehot = tape.constant(onehots(indices, k));
        debug_assert_eq!(indices.len(), b);
        let picked = tape.gather(logq, indices);
        let mtilde = match self.straight_through {
            StraightThrough::Elementwise => {
                let cut = tape.stop_gradient(logq);
                let delta = tape.sub(logq, cut);
                tape.add(onehot, delta)
            }
            StraightThrough::Broadcast => {
                let cut = tape.stop_gradient(picked);
                let delta = tape.sub(picked, cut);
                tape.add_col(onehot, delta)
            }
        };
        (mtilde, picked)
    }

    /// One agent's CPC objective on a batch.
    ///
    /// `joint` holds the sampled joint messages (B × N·K); block `agent` is
    /// replaced by the straight-through node built from `own`, all other blocks
    /// enter as constants.
    pub fn objective(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &Array2<f64>,
        own: &[usize],
        joint: &Array2<f64>,
        agent: usize,
    ) -> Result<CpcTerms> {
        let b = x.nrows();
        ensure!(
            x.ncols() == self.obs_dim,
            "observation width {} != {}",
            x.ncols(),
            self.obs_dim
        );
        ensure!(
            own.len() == b,
            "{} messages for {b} observations",
            own.len()
        );
        ensure!(
            joint.dim() == (b, self.n_agents * self.k),
            "joint message batch has shape {:?}, expected ({b}, {})",
            joint.dim(),
            self.n_agents * self.k
        );
        ensure!(agent < self.n_agents, "agent {agent} out of range");
        let xv = tape.constant(x.clone());
        let (logq, z) = self.encoder_logprobs(tape, store, xv)?;
        let (mtilde, picked) = self.straight_through_node(tape, logq, own);
        let joint_in = self.splice(tape, joint, agent, mtilde);
        let logits = self.decoder.forward(tape, store, joint_in)?;
        let reconstruction = tape.bernoulli_log_likelihood(logits, x);
        let kl = kl_estimate_node(tape, picked, self.prior_prob());
        let weighted = tape.scale(kl, self.beta);
        let per_row = tape.sub(reconstruction, weighted);
        let objective = tape.mean(per_row);
        Ok(CpcTerms {
            objective,
            reconstruction,
            kl,
            z,
        })
    }

    /// Rebuilds the decoder input with `agent`'s block taken from `block`.
    pub fn splice(&self, tape: &mut Tape, joint: &Array2<f64>, agent: usize, block: Var) -> Var {
        let k = self.k;
        let mut parts = Vec::with_capacity(3);
        if agent > 0 {
            parts.push(tape.constant(joint.slice(s![.., ..agent * k]).to_owned()));
        }
        parts.push(block);
        if agent + 1 < self.n_agents {
            parts.push(tape.constant(joint.slice(s![.., (agent + 1) * k..]).to_owned()));
        }
        if parts.len() == 1 {
            block
        } else {
            tape.concat(&parts)
        }
    }
}

/// B×K matrix of one-hot rows.
pub fn onehots(indices: &[usize], k: usize) -> Array2<f64> {
    let mut m = Array2::zeros((indices.len(), k));
    for (r, &i) in indices.iter().enumerate() {
        m[[r, i]] = 1.0;
    }
    m
}
