use rand::Rng;

use super::*;
use crate::agents::AgentCondition;
use crate::cpc::StraightThrough;
use crate::diff::{AdamConfig, Tape};
use crate::env::{EnvKind, InformedAgent};
use crate::rng;

fn team(condition: AgentCondition, env: EnvKind, seed: u64) -> Vec<AgentBundle> {
    build_team(
        condition,
        &env.obs_dims(),
        &env.n_actions(),
        env.default_k(),
        1.0,
        StraightThrough::Elementwise,
        AdamConfig::default(),
        seed,
    )
    .unwrap()
}

fn rollout(
    t: &[AgentBundle],
    env: EnvKind,
    workers: usize,
    steps: usize,
    seed: u64,
) -> RolloutBatch {
    let mut c = Collector::new(env, InformedAgent::First, workers, seed);
    let mut b = c.collect(t, steps).unwrap();
    if !env.is_bandit() {
        compute_advantages(&mut b, 0.99, 0.95).unwrap();
    }
    b
}

fn ppo(normalize_advantages: bool) -> RlObjective {
    RlObjective::Ppo {
        clip_eps: 0.2,
        value_coef: 0.5,
        entropy_coef: 0.01,
        normalize_advantages,
    }
}

// ---- GAE ----

/// `A_t = sum_l (gamma lambda)^l delta_{t+l}`, truncated at the first episode end.
fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut w = 1.0;
            for u in t..n {
                let next = if d[u] { 0.0 } else { v[u + 1] };
                acc += w * (r[u] + gamma * next - v[u]);
                if d[u] {
                    break;
                }
                w *= gamma * lambda;
            }
            acc
        })
        .collect()
}

#[test]
fn gae_lambda_zero_is_the_td_error() {
    let r = [0.5, -1.0, 2.0];
    let v = [0.1, 0.2, 0.3, 0.4];
    let g = compute_gae(&r, &v, &[false, false, false], 0.9, 0.0).unwrap();
    for t in 0..3 {
        assert!((g.advantages[t] - (r[t] + 0.9 * v[t + 1] - v[t])).abs() < 1e-15);
    }
}

#[test]
fn gae_lambda_one_with_zero_values_is_the_discounted_return() {
    let r = [1.0, 2.0, 3.0, 4.0];
    let g = compute_gae(&r, &[0.0; 5], &[false, true, false, false], 0.5, 1.0).unwrap();
    assert_eq!(
        g.advantages,
        vec![1.0 + 0.5 * 2.0, 2.0, 3.0 + 0.5 * 4.0, 4.0]
    );
    assert_eq!(g.advantages, g.targets);
}

#[test]
fn gae_matches_nested_sum_oracle() {
    let mut rg = rng::stream(10, &[]);
    let r: Vec<f64> = (0..20).map(|_| rg.gen_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..21).map(|_| rg.gen_range(-1.0..1.0)).collect();
    let mut d = vec![false; 20];
    d[6] = true;
    d[13] = true;
    let g = compute_gae(&r, &v, &d, 0.99, 0.95).unwrap();
    let o = gae_oracle(&r, &v, &d, 0.99, 0.95);
    for t in 0..20 {
        assert!((g.advantages[t] - o[t]).abs() < 1e-10);
        assert!((g.targets[t] - (o[t] + v[t])).abs() < 1e-10);
    }

    for case in 0..100 {
        let n = rg.gen_range(1..=100);
        let r: Vec<f64> = (0..n).map(|_| rg.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..=n).map(|_| rg.gen_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rg.gen_bool(0.1)).collect();
        let (gamma, lambda) = (rg.gen_range(0.5..1.0), rg.gen_range(0.0..=1.0));
        let g = compute_gae(&r, &v, &d, gamma, lambda).unwrap();
        let o = gae_oracle(&r, &v, &d, gamma, lambda);
        for t in 0..n {
            assert!((g.advantages[t] - o[t]).abs() < 1e-10, "case {case} t {t}");
        }
    }
}

#[test]
fn gae_lambda_one_targets_are_bootstrapped_returns() {
    let mut rg = rng::stream(11, &[]);
    let n = 30;
    let r: Vec<f64> = (0..n).map(|_| rg.gen_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..=n).map(|_| rg.gen_range(-1.0..1.0)).collect();
    let mut d = vec![false; n];
    d[9] = true;
    let gamma = 0.97;
    let g = compute_gae(&r, &v, &d, gamma, 1.0).unwrap();
    for t in 0..n {
        let mut ret = 0.0;
        let mut w = 1.0;
        let mut u = t;
        loop {
            ret += w * r[u];
            w *= gamma;
            if d[u] {
                break;
            }
            u += 1;
            if u == n {
                ret += w * v[n];
                break;
            }
        }
        assert!((g.targets[t] - ret).abs() < 1e-10, "t {t}");
    }
}

#[test]
fn gae_rejects_mismatched_lengths() {
    assert!(compute_gae(&[1.0, 2.0], &[0.0, 0.0], &[false, false], 0.9, 0.9).is_err());
    assert!(compute_gae(&[1.0, 2.0], &[0.0; 3], &[false], 0.9, 0.9).is_err());
}

#[test]
fn advantages_are_computed_per_worker_segment() {
    let t = team(AgentCondition::NoComm, EnvKind::Observer, 0);
    let b = rollout(&t, EnvKind::Observer, 3, 7, 1);
    for (a, ab) in b.agents.iter().enumerate() {
        for w in 0..3 {
            let seg = w * 7..(w + 1) * 7;
            let mut v = ab.values_old[seg.clone()].to_vec();
            v.push(b.bootstrap[a][w]);
            let o = gae_oracle(
                &ab.rewards[seg.clone()],
                &v,
                &ab.dones[seg.clone()],
                0.99,
                0.95,
            );
            for (x, y) in ab.advantages[seg].iter().zip(o) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

// ---- objectives ----

/// A one-row batch of agent 1 whose stored log-probability is shifted so the
/// ratio is `ratio`, with advantage `adv`.
fn ratio_batch(t: &[AgentBundle], ratio: f64, adv: f64) -> AgentBatch {
    let b = rollout(t, EnvKind::Observer, 1, 1, 2);
    let mut ab = b.agents[1].clone();
    ab.logp_old[0] -= ratio.ln();
    ab.advantages = vec![adv];
    ab.targets = vec![0.0];
    ab
}

fn surrogate(t: &[AgentBundle], ratio: f64, adv: f64) -> f64 {
    let ab = ratio_batch(t, ratio, adv);
    let mut tape = Tape::new();
    let o = objective(&mut tape, &t[1], &ab, &[0], ppo(false)).unwrap();
    assert!((tape.value(o.ratio.unwrap())[[0, 0]] - ratio).abs() < 1e-12);
    tape.scalar(o.surrogate.unwrap())
}

#[test]
fn clipped_surrogate_arithmetic() {
    let t = team(AgentCondition::NoComm, EnvKind::Observer, 3);
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    assert!(close(surrogate(&t, 1.0, 0.7), 0.7));
    assert!(close(surrogate(&t, 1.5, 1.0), 1.2));
    assert!(close(surrogate(&t, 0.5, -1.0), -0.8));
    assert!(close(surrogate(&t, 0.5, 1.0), 0.5));
    assert!(close(surrogate(&t, 1.5, -1.0), -1.5));
    assert!(close(surrogate(&t, 1.1, 2.0), 2.2));
}

#[test]
fn clipped_surrogate_gradient_vanishes_outside_the_trust_region() {
    let mut t = team(AgentCondition::NoComm, EnvKind::Observer, 4);
    for (ratio, adv, zero) in [
        (1.5, 1.0, true),
        (0.5, -1.0, true),
        (1.05, 1.0, false),
        (0.5, 1.0, false),
    ] {
        let ab = ratio_batch(&t, ratio, adv);
        let mut tape = Tape::new();
        let o = objective(&mut tape, &t[1], &ab, &[0], ppo(false)).unwrap();
        t[1].store.zero_grad();
        tape.backward(o.surrogate.unwrap(), &mut [&mut t[1].store])
            .unwrap();
        let norm: f64 = t[1]
            .store
            .params()
            .iter()
            .filter(|p| p.name.contains("policy"))
            .map(|p| p.grad.iter().map(|g| g * g).sum::<f64>())
            .sum();
        assert_eq!(norm == 0.0, zero, "ratio {ratio} adv {adv}");
    }
}

fn policy_grads(store: &crate::diff::ParamStore) -> Vec<f64> {
    store
        .params()
        .iter()
        .filter(|p| p.name.contains(".policy"))
        .flat_map(|p| p.grad.iter().copied().collect::<Vec<_>>())
        .collect()
}

#[test]
fn reinforce_with_zero_reward_has_no_gradient_and_unit_reward_is_score() {
    let mut t = team(AgentCondition::NoComm, EnvKind::Bandit, 5);
    let mut ab = rollout(&t, EnvKind::Bandit, 4, 3, 6).agents.remove(0);
    let idx: Vec<usize> = (0..ab.len()).collect();

    ab.rewards.fill(0.0);
    let mut tape = Tape::new();
    let o = objective(&mut tape, &t[0], &ab, &idx, RlObjective::Reinforce).unwrap();
    assert_eq!(tape.scalar(o.rl), 0.0);
    t[0].store.zero_grad();
    tape.backward(o.total, &mut [&mut t[0].store]).unwrap();
    assert!(policy_grads(&t[0].store).iter().all(|&g| g == 0.0));

    ab.rewards.fill(1.0);
    let mut tape = Tape::new();
    let o = objective(&mut tape, &t[0], &ab, &idx, RlObjective::Reinforce).unwrap();
    t[0].store.zero_grad();
    tape.backward(o.total, &mut [&mut t[0].store]).unwrap();
    let got = policy_grads(&t[0].store);

    let mut tape = Tape::new();
    let terms = t[0]
        .evaluate(&mut tape, &ab.obs, &ab.inputs, &ab.actions, None)
        .unwrap();
    let score = tape.mean(terms.logp);
    t[0].store.zero_grad();
    tape.backward(score, &mut [&mut t[0].store]).unwrap();
    let want = policy_grads(&t[0].store);
    assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-14));
    assert!(want.iter().any(|&g| g != 0.0));
}

fn fd_objective(
    bundle: &mut AgentBundle,
    batch: &AgentBatch,
    idx: &[usize],
    rl: RlObjective,
    samples: usize,
) -> f64 {
    objective_gradcheck(
        bundle,
        batch,
        idx,
        rl,
        1e-5,
        1e-4,
        samples,
        &mut rng::stream(99, &[]),
    )
    .unwrap()
    .max_rel_error
}

/// Moves every stored log-probability so ratios sit well inside or well
/// outside the clip range, away from the kinks.
fn spread_ratios(ab: &mut AgentBatch) {
    for (i, lp) in ab.logp_old.iter_mut().enumerate() {
        *lp -= [0.0, 0.5, -0.6, 0.08][i % 4];
    }
}

#[test]
fn objective_gradients_match_finite_differences() {
    for cond in AgentCondition::ALL {
        let mut t = team(cond, EnvKind::Bandit, 7);
        let ab = rollout(&t, EnvKind::Bandit, 3, 4, 8).agents.remove(1);
        let idx: Vec<usize> = (0..ab.len()).collect();
        let err = fd_objective(&mut t[1], &ab, &idx, RlObjective::Reinforce, 400);
        assert!(err < 1e-5, "reinforce {cond}: {err}");
    }
    for cond in AgentCondition::ALL {
        let mut t = team(cond, EnvKind::Observer, 9);
        let mut ab = rollout(&t, EnvKind::Observer, 2, 6, 10).agents.remove(1);
        spread_ratios(&mut ab);
        let idx: Vec<usize> = (0..ab.len()).step_by(2).collect();
        let err = fd_objective(&mut t[1], &ab, &idx, ppo(true), 400);
        assert!(err < 1e-5, "ppo {cond}: {err}");
    }
}

#[test]
fn total_objective_is_rl_plus_cpc() {
    let t = team(AgentCondition::Cpc, EnvKind::Observer, 12);
    let b = rollout(&t, EnvKind::Observer, 2, 8, 13);
    for (a, ab) in b.agents.iter().enumerate() {
        let idx: Vec<usize> = (0..ab.len()).collect();
        let mut tape = Tape::new();
        let o = objective(&mut tape, &t[a], ab, &idx, ppo(true)).unwrap();
        let sum = tape.scalar(o.rl) + tape.scalar(o.cpc.unwrap());
        assert!((tape.scalar(o.total) - sum).abs() < 1e-12);
    }
}

#[test]
fn rl_and_cpc_terms_touch_disjoint_parameters() {
    let mut t = team(AgentCondition::Cpc, EnvKind::Observer, 14);
    let ab = rollout(&t, EnvKind::Observer, 2, 8, 15).agents.remove(0);
    let idx: Vec<usize> = (0..ab.len()).collect();
    let b = &mut t[0];
    for rl_only in [true, false] {
        let mut tape = Tape::new();
        let o = objective(&mut tape, b, &ab, &idx, ppo(true)).unwrap();
        let root = if rl_only { o.rl } else { o.cpc.unwrap() };
        b.store.zero_grad();
        tape.backward(root, &mut [&mut b.store]).unwrap();
        for p in b.store.params() {
            let nonzero = p.grad.iter().any(|&g| g != 0.0);
            let is_cpc = p.name.contains(".cpc");
            if rl_only && is_cpc || !rl_only && !is_cpc {
                assert!(!nonzero, "{} leaks (rl_only {rl_only})", p.name);
            }
        }
    }
}

// ---- updates ----

#[test]
fn minibatches_partition_the_batch() {
    let mut r = rng::stream(16, &[]);
    for (n, c) in [(256, 4), (10, 3), (7, 7), (5, 1)] {
        let mbs = minibatches(n, c, &mut r);
        assert_eq!(mbs.len(), c);
        let mut all: Vec<usize> = mbs.concat();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = mbs.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

#[test]
fn first_minibatch_ratio_is_one_for_every_condition() {
    for cond in AgentCondition::ALL {
        let mut t = team(cond, EnvKind::Observer, 17);
        let b = rollout(&t, EnvKind::Observer, 4, 16, 18);
        for (a, ab) in b.agents.iter().enumerate() {
            let s = ppo_update(
                &mut t[a],
                ab,
                ppo(true),
                2,
                4,
                &mut rng::stream(19, &[a as u64]),
            )
            .unwrap();
            assert!(
                s.first_ratio_deviation < 1e-12,
                "{cond} agent {a}: {}",
                s.first_ratio_deviation
            );
            assert_eq!(s.updates, 8);
        }
    }
}

#[test]
fn surrogate_never_exceeds_the_clipped_gain() {
    let mut t = team(AgentCondition::NoComm, EnvKind::Observer, 20);
    let mut ab = rollout(&t, EnvKind::Observer, 4, 16, 21).agents.remove(1);
    for a in ab.advantages.iter_mut() {
        *a = a.abs() + 0.1;
    }
    let rl = RlObjective::Ppo {
        clip_eps: 0.2,
        value_coef: 0.5,
        entropy_coef: 0.01,
        normalize_advantages: false,
    };
    let s = ppo_update(&mut t[1], &ab, rl, 6, 4, &mut rng::stream(22, &[])).unwrap();
    assert!(s.clip_bound_ratio <= 1.2 + 1e-12, "{}", s.clip_bound_ratio);
}

#[test]
fn updating_one_agent_leaves_the_other_alone() {
    let t = team(AgentCondition::Cpc, EnvKind::Bandit, 23);
    let b = rollout(&t, EnvKind::Bandit, 4, 8, 24);
    let snap = |b: &AgentBundle| -> Vec<f64> {
        b.store
            .params()
            .iter()
            .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
            .collect()
    };

    let mut solo = t.clone();
    bandit_update(&mut solo[1], &b.agents[1], 1, 4, &mut rng::stream(25, &[])).unwrap();
    assert_eq!(snap(&solo[0]), snap(&t[0]));

    let mut both = t.clone();
    bandit_update(&mut both[0], &b.agents[0], 1, 4, &mut rng::stream(26, &[])).unwrap();
    bandit_update(&mut both[1], &b.agents[1], 1, 4, &mut rng::stream(25, &[])).unwrap();
    assert_eq!(snap(&both[1]), snap(&solo[1]));
    assert_ne!(snap(&both[0]), snap(&t[0]));
}

// ---- trainer ----

fn small(env: EnvKind, condition: AgentCondition) -> TrainerConfig {
    let mut c = TrainerConfig::defaults(env, condition);
    c.workers = 2;
    c.steps_per_worker = 8;
    c.budget = 48;
    c.eval_every = 2;
    c.eval_episodes = 4;
    c.seed = 3;
    c
}

#[test]
fn zero_budget_gives_one_initial_record() {
    let mut c = small(EnvKind::Bandit, AgentCondition::Cpc);
    c.budget = 0;
    let out = run_training(&c, |_| Ok(())).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].iteration, 0);
    assert_eq!(out.records[0].env_steps, 0);
}

#[test]
fn evaluation_cadence_includes_the_last_iteration() {
    let c = small(EnvKind::Bandit, AgentCondition::NoComm);
    let mut seen = Vec::new();
    let out = run_training(&c, |r| {
        seen.push(r.iteration);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![0, 2, 3]);
    assert_eq!(
        out.records.iter().map(|r| r.iteration).collect::<Vec<_>>(),
        seen
    );
    assert_eq!(out.records.last().unwrap().episodes, 48);
}

#[test]
fn training_is_deterministic_per_seed() {
    let c = small(EnvKind::Observer, AgentCondition::MessageAction);
    let a = run_training(&c, |_| Ok(())).unwrap();
    let b = run_training(&c, |_| Ok(())).unwrap();
    assert_eq!(a.records, b.records);
    for (x, y) in a.bundles.iter().zip(&b.bundles) {
        for (p, q) in x.store.params().iter().zip(y.store.params()) {
            assert_eq!(p.value, q.value);
        }
    }
    let mut c2 = c.clone();
    c2.seed = 4;
    let d = run_training(&c2, |_| Ok(())).unwrap();
    assert_ne!(
        a.bundles[1].store.params()[0].value,
        d.bundles[1].store.params()[0].value
    );
}

#[test]
fn sink_errors_stop_training() {
    let c = small(EnvKind::Bandit, AgentCondition::NoComm);
    let res = run_training(&c, |_| Err(crate::Error::contract("disk full")));
    assert!(res.is_err());
}

#[test]
fn config_validation_and_budget_arithmetic() {
    let bandit = TrainerConfig::defaults(EnvKind::Bandit, AgentCondition::Cpc);
    assert_eq!(bandit.batch_size(), 256);
    assert_eq!(bandit.iterations(), 117);
    let obs = TrainerConfig::defaults(EnvKind::Observer, AgentCondition::Cpc);
    assert_eq!(obs.batch_size(), 1024);
    assert_eq!(obs.iterations(), 2929);
    assert_eq!(obs.k, 20);
    assert!(bandit.validate().is_ok());
    let mut bad = bandit.clone();
    bad.k = 1;
    assert!(bad.validate().is_err());
    let mut bad = bandit.clone();
    bad.minibatches = 1000;
    assert!(bad.validate().is_err());
    let mut bad = obs;
    bad.clip_eps = 0.0;
    assert!(Trainer::new(bad).is_err());
}
