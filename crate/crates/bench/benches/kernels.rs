use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use marlcpc_core::agents::{build_team, decide};
use marlcpc_core::algo::{compute_advantages, objective, Collector, RlObjective};
use marlcpc_core::cpc::{onehots, CpcHead};
use marlcpc_core::diff::{Activation, AdamConfig, Mlp, ParamStore, Tape};
use marlcpc_core::env::Env;
use marlcpc_core::rng::stream;
use marlcpc_core::{AblationMode, AgentCondition, EnvKind, InformedAgent, StraightThrough};
use ndarray::{concatenate, Array2, Axis};
use rand::Rng;

fn mlp(c: &mut Criterion) {
    let mut r = stream(1, &[]);
    let mut s = ParamStore::new();
    let net = Mlp::new(&mut s, "net", &[24, 64, 64, 5], Activation::Tanh, &mut r).unwrap();
    let x = Array2::from_shape_fn((256, 24), |_| r.gen_range(-1.0..1.0));
    c.bench_function("mlp_forward_backward_256x24", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let y = net.forward(&mut tape, &s, xv).unwrap();
            let loss = tape.sum(y);
            s.zero_grad();
            tape.backward(loss, &mut [&mut s]).unwrap();
        })
    });
}

fn cpc_objective(c: &mut Criterion) {
    let mut r = stream(2, &[]);
    let (obs_dim, k, n) = (16, 20, 256);
    let mut s = ParamStore::new();
    let head = CpcHead::new(
        &mut s,
        "cpc",
        obs_dim,
        2,
        k,
        1.0,
        StraightThrough::Elementwise,
        &mut r,
    )
    .unwrap();
    let x = Array2::from_shape_fn((n, obs_dim), |_| f64::from(r.gen_bool(0.3)));
    let own: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
    let other: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
    let joint = concatenate![Axis(1), onehots(&own, k), onehots(&other, k)];
    c.bench_function("cpc_objective_backward_256", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let t = head.objective(&mut tape, &s, &x, &own, &joint, 0).unwrap();
            s.zero_grad();
            tape.backward(t.objective, &mut [&mut s]).unwrap();
        })
    });
}

fn env_step(c: &mut Criterion) {
    let mut r = stream(3, &[]);
    let mut env = Env::new(EnvKind::Observer, InformedAgent::First);
    env.reset(&mut r);
    let n = EnvKind::Observer.n_actions();
    c.bench_function("observer_step", |b| {
        b.iter(|| {
            let actions = [r.gen_range(0..n[0]), r.gen_range(0..n[1])];
            if env.step(black_box(&actions)).unwrap().done {
                env.reset(&mut r);
            }
        })
    });
}

fn team_decide(c: &mut Criterion) {
    let env = EnvKind::Observer;
    let team = build_team(
        AgentCondition::Cpc,
        &env.obs_dims(),
        &env.n_actions(),
        env.default_k(),
        1.0,
        StraightThrough::Elementwise,
        AdamConfig::default(),
        4,
    )
    .unwrap();
    let obs: Vec<Array2<f64>> = env
        .obs_dims()
        .iter()
        .map(|&d| Array2::zeros((8, d)))
        .collect();
    let mut rngs: Vec<_> = (0..8).map(|i| stream(5, &[i])).collect();
    c.bench_function("cpc_team_decide_8_lanes", |b| {
        b.iter(|| decide(&team, &obs, AblationMode::None, &mut rngs).unwrap())
    });
}

fn ppo_minibatch(c: &mut Criterion) {
    let env = EnvKind::Observer;
    let team = build_team(
        AgentCondition::Cpc,
        &env.obs_dims(),
        &env.n_actions(),
        env.default_k(),
        1.0,
        StraightThrough::Elementwise,
        AdamConfig::default(),
        6,
    )
    .unwrap();
    let mut batch = Collector::new(env, InformedAgent::First, 8, 7)
        .collect(&team, 128)
        .unwrap();
    compute_advantages(&mut batch, 0.99, 0.95).unwrap();
    let idx: Vec<usize> = (0..256).collect();
    let rl = RlObjective::Ppo {
        clip_eps: 0.2,
        value_coef: 0.5,
        entropy_coef: 0.01,
        normalize_advantages: true,
    };
    c.bench_function("ppo_cpc_minibatch_256", |b| {
        b.iter_batched(
            || team[0].clone(),
            |mut agent| {
                let mut tape = Tape::new();
                let o = objective(&mut tape, &agent, &batch.agents[0], &idx, rl).unwrap();
                agent.store.zero_grad();
                tape.backward(o.total, &mut [&mut agent.store]).unwrap();
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    mlp,
    cpc_objective,
    env_step,
    team_decide,
    ppo_minibatch
);
criterion_main!(benches);
