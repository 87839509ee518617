use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::rollout::AgentBatch;
use crate::agents::AgentBundle;
use crate::diff::gradcheck::{relative_error, GradCheck};
use crate::diff::{Tape, Var};
use crate::error::{ensure, Error, Result};

/// Which reinforcement term enters the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RlObjective {
    /// `r * log pi(a)`.
    Reinforce,
    /// Clipped surrogate minus value loss plus entropy bonus.
    Ppo {
        clip_eps: f64,
        value_coef: f64,
        entropy_coef: f64,
        normalize_advantages: bool,
    },
}

/// Graph nodes of one agent's combined objective on a minibatch.
pub struct ObjectiveTerms {
    /// RL term plus CPC term, to maximise.
    pub total: Var,
    pub rl: Var,
    pub cpc: Option<Var>,
    /// PPO only: ratio column, surrogate mean, value loss, mean entropy.
    pub ratio: Option<Var>,
    pub surrogate: Option<Var>,
    pub value_loss: Option<Var>,
    pub entropy: Option<Var>,
    /// Advantages actually used (after any normalisation).
    pub advantages: Vec<f64>,
}

fn rows(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

fn column(v: &[f64], idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), 1), |(r, _)| v[idx[r]])
}

/// Standardise to mean 0 and unit standard deviation.
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    xs.iter().map(|x| (x - mean) / (std + 1e-8)).collect()
}

/// Builds the combined objective of `bundle` on rows `idx` of `batch`.
pub fn objective(
    tape: &mut Tape,
    bundle: &AgentBundle,
    batch: &AgentBatch,
    idx: &[usize],
    rl: RlObjective,
) -> Result<ObjectiveTerms> {
    ensure!(!idx.is_empty(), "empty minibatch");
    let obs = rows(&batch.obs, idx);
    let inputs = rows(&batch.inputs, idx);
    let actions: Vec<usize> = idx.iter().map(|&i| batch.actions[i]).collect();
    let messages: Option<Vec<usize>> = batch
        .messages
        .as_ref()
        .map(|m| idx.iter().map(|&i| m[i]).collect());
    let terms = bundle.evaluate(tape, &obs, &inputs, &actions, messages.as_deref())?;

    let mut out = ObjectiveTerms {
        total: terms.logp,
        rl: terms.logp,
        cpc: None,
        ratio: None,
        surrogate: None,
        value_loss: None,
        entropy: None,
        advantages: Vec::new(),
    };
    out.rl = match rl {
        RlObjective::Reinforce => {
            let r = tape.constant(column(&batch.rewards, idx));
            let weighted = tape.mul(r, terms.logp);
            tape.mean(weighted)
        }
        RlObjective::Ppo {
            clip_eps,
            value_coef,
            entropy_coef,
            normalize_advantages,
        } => {
            ensure!(
                batch.advantages.len() == batch.len() && batch.targets.len() == batch.len(),
                "advantages not computed"
            );
            let raw: Vec<f64> = idx.iter().map(|&i| batch.advantages[i]).collect();
            let adv = if normalize_advantages {
                normalize(&raw)
            } else {
                raw
            };
            let adv_col =
                tape.constant(Array2::from_shape_vec((adv.len(), 1), adv.clone()).unwrap());
            let old = tape.constant(column(&batch.logp_old, idx));
            let diff = tape.sub(terms.logp, old);
            let ratio = tape.exp(diff);
            let s1 = tape.mul(ratio, adv_col);
            let clipped = tape.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
            let s2 = tape.mul(clipped, adv_col);
            let surr = tape.min(s1, s2);
            let j_pi = tape.mean(surr);
            let targ = tape.constant(column(&batch.targets, idx));
            let err = tape.sub(terms.value, targ);
            let sq = tape.square(err);
            let j_v = tape.mean(sq);
            let h = tape.mean(terms.entropy);
            let v_term = tape.scale(j_v, -value_coef);
            let h_term = tape.scale(h, entropy_coef);
            let partial = tape.add(j_pi, v_term);
            out.ratio = Some(ratio);
            out.surrogate = Some(j_pi);
            out.value_loss = Some(j_v);
            out.entropy = Some(h);
            out.advantages = adv;
            tape.add(partial, h_term)
        }
    };
    out.total = out.rl;
    if let Some(head) = &bundle.cpc {
        let joint = batch
            .joint
            .as_ref()
            .ok_or_else(|| Error::contract("cpc agent batch has no joint messages"))?;
        let own = messages
            .as_ref()
            .ok_or_else(|| Error::contract("cpc agent batch has no messages"))?;
        let t = head.objective(
            tape,
            &bundle.store,
            &obs,
            own,
            &rows(joint, idx),
            bundle.index(),
        )?;
        out.cpc = Some(t.objective);
        out.total = tape.add(out.rl, t.objective);
    }
    Ok(out)
}

/// Central-difference check of the combined objective's gradient at
/// `samples` parameter scalars drawn by `rng`. Perturbed evaluations replay
/// the stop-gradient values of the base point.
pub fn objective_gradcheck<R: Rng + ?Sized>(
    bundle: &mut AgentBundle,
    batch: &AgentBatch,
    idx: &[usize],
    rl: RlObjective,
    step: f64,
    floor: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheck> {
    let mut tape = Tape::new();
    let o = objective(&mut tape, bundle, batch, idx, rl)?;
    bundle.store.zero_grad();
    tape.backward(o.total, &mut [&mut bundle.store])?;
    let frozen = tape.stopped_values().to_vec();
    let eval = |b: &AgentBundle| -> Result<f64> {
        let mut tape = Tape::replaying(frozen.clone());
        let o = objective(&mut tape, b, batch, idx, rl)?;
        Ok(tape.scalar(o.total))
    };
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let p = rng.gen_range(0..bundle.store.len());
        let k = rng.gen_range(0..bundle.store.params()[p].value.len());
        let orig = bundle.store.params()[p].value.as_slice().unwrap()[k];
        let set = |b: &mut AgentBundle, v: f64| {
            b.store.params_mut()[p].value.as_slice_mut().unwrap()[k] = v
        };
        set(bundle, orig + step);
        let up = eval(bundle)?;
        set(bundle, orig - step);
        let down = eval(bundle)?;
        set(bundle, orig);
        let analytic = bundle.store.params()[p].grad.as_slice().unwrap()[k];
        worst = worst.max(relative_error(analytic, (up - down) / (2.0 * step), floor));
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked: samples,
    })
}

/// Shuffled split of `0..n` into `count` near-equal parts.
pub fn minibatches<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let base = n / count;
    let extra = n % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for c in 0..count {
        let len = base + usize::from(c < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Averages over the minibatch updates of one call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub updates: usize,
    pub rl: f64,
    pub cpc: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Largest `|ratio - 1|` on the first minibatch of the first epoch.
    pub first_ratio_deviation: f64,
    /// Largest `|J_pi| / max|A|` seen on any minibatch.
    pub clip_bound_ratio: f64,
}

/// One gradient-ascent step on `total`.
fn ascend(bundle: &mut AgentBundle, tape: &mut Tape, total: Var) -> Result<()> {
    let loss = tape.scale(total, -1.0);
    bundle.store.zero_grad();
    if let Err(e) = tape.backward(loss, &mut [&mut bundle.store]) {
        log::error!("agent {} update failed: {e}", bundle.index());
        return Err(e);
    }
    bundle.optimizer.step(&mut bundle.store)
}

fn run_epochs<R: Rng + ?Sized>(
    bundle: &mut AgentBundle,
    batch: &AgentBatch,
    rl: RlObjective,
    epochs: usize,
    minibatch_count: usize,
    rng: &mut R,
) -> Result<UpdateStats> {
    ensure!(!batch.is_empty(), "update on an empty batch");
    ensure!(
        minibatch_count >= 1 && minibatch_count <= batch.len(),
        "bad minibatch count {minibatch_count}"
    );
    let mut stats = UpdateStats::default();
    for epoch in 0..epochs {
        for (m, idx) in minibatches(batch.len(), minibatch_count, rng)
            .into_iter()
            .enumerate()
        {
            let mut tape = Tape::new();
            let t = objective(&mut tape, bundle, batch, &idx, rl)?;
            stats.updates += 1;
            stats.rl += tape.scalar(t.rl);
            if let Some(c) = t.cpc {
                stats.cpc += tape.scalar(c);
            }
            if let (Some(r), Some(s), Some(v), Some(h)) =
                (t.ratio, t.surrogate, t.value_loss, t.entropy)
            {
                if epoch == 0 && m == 0 {
                    stats.first_ratio_deviation = tape
                        .value(r)
                        .iter()
                        .fold(0.0, |acc: f64, &x| acc.max((x - 1.0).abs()));
                }
                let max_a = t
                    .advantages
                    .iter()
                    .fold(0.0, |acc: f64, a| acc.max(a.abs()));
                if max_a > 0.0 {
                    stats.clip_bound_ratio =
                        stats.clip_bound_ratio.max(tape.scalar(s).abs() / max_a);
                }
                stats.surrogate += tape.scalar(s);
                stats.value_loss += tape.scalar(v);
                stats.entropy += tape.scalar(h);
            }
            ascend(bundle, &mut tape, t.total)?;
        }
    }
    let n = stats.updates as f64;
    stats.rl /= n;
    stats.cpc /= n;
    stats.surrogate /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    Ok(stats)
}

/// Policy-gradient update for one-step episodes: ascends `r * log pi + J_cpc`.
pub fn bandit_update<R: Rng + ?Sized>(
    bundle: &mut AgentBundle,
    batch: &AgentBatch,
    epochs: usize,
    minibatch_count: usize,
    rng: &mut R,
) -> Result<UpdateStats> {
    run_epochs(
        bundle,
        batch,
        RlObjective::Reinforce,
        epochs,
        minibatch_count,
        rng,
    )
}

/// Clipped-surrogate update plus the CPC term. Advantages and targets must
/// already be filled in.
pub fn ppo_update<R: Rng + ?Sized>(
    bundle: &mut AgentBundle,
    batch: &AgentBatch,
    rl: RlObjective,
    epochs: usize,
    minibatch_count: usize,
    rng: &mut R,
) -> Result<UpdateStats> {
    ensure!(
        matches!(rl, RlObjective::Ppo { .. }),
        "ppo_update needs a PPO objective"
    );
    run_epochs(bundle, batch, rl, epochs, minibatch_count, rng)
}
