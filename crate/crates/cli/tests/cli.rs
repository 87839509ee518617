use std::path::Path;
use std::process::Command;

use marlcpc_cli::commands::{self, ablation_report, eval_checkpoint};
use marlcpc_cli::config::RawConfig;
use marlcpc_cli::metrics::{read_metrics, read_summary};
use marlcpc_cli::sweep::{self, Manifest};
use marlcpc_core::{AblationMode, AgentCondition, EnvKind, TrainerConfig};
use tempfile::tempdir;

const TINY_BANDIT: &str = r#"
[run]
env = "bandit"
condition = "cpc"
seed = 2
budget = 128
eval_every = 1
eval_episodes = 8

[trainer]
workers = 2
steps_per_worker = 16
"#;

fn config(text: &str) -> marlcpc_cli::config::RunConfig {
    RawConfig::parse(text).unwrap().resolve().unwrap()
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_marlcpc"));
    c.env("RUST_LOG", "error");
    c
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn zero_budget_writes_a_single_metrics_row() {
    let dir = tempdir().unwrap();
    let cfg = config(&TINY_BANDIT.replace("budget = 128", "budget = 0"));
    let out = commands::train(&cfg, dir.path()).unwrap();
    assert_eq!(out.records.len(), 1);
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].iteration, rows[0].env_steps), (0, 0));
    assert!(dir.path().join("final.ckpt").is_file());
    assert!(dir.path().join("config.resolved").is_file());
}

#[test]
fn repeated_runs_write_identical_metrics() {
    let text = r#"
[run]
env = "observer"
condition = "cpc"
seed = 9
budget = 1024
eval_every = 1
eval_episodes = 3

[trainer]
workers = 2
steps_per_worker = 128
"#;
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    commands::train(&config(text), a.path()).unwrap();
    commands::train(&config(text), b.path()).unwrap();
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(
        std::fs::read(a.path().join("final.ckpt")).unwrap(),
        std::fs::read(b.path().join("final.ckpt")).unwrap()
    );
}

#[test]
fn intermediate_checkpoints_follow_the_cadence() {
    let dir = tempdir().unwrap();
    let mut cfg = config(TINY_BANDIT);
    cfg.checkpoint_every = 2;
    commands::train(&cfg, dir.path()).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["iter_000002.ckpt", "iter_000004.ckpt"]);
}

#[test]
fn reloaded_checkpoint_reproduces_evaluation() {
    let dir = tempdir().unwrap();
    let cfg = config(TINY_BANDIT);
    let out = commands::train(&cfg, dir.path()).unwrap();
    let path = dir.path().join("final.ckpt");
    let a = eval_checkpoint(&path, 50, Some(1)).unwrap();
    let b = eval_checkpoint(&path, 50, Some(1)).unwrap();
    assert_eq!(a, b);
    let direct = ablation_report(&out.bundles, &cfg.trainer, &[AblationMode::None], 50, 1).unwrap();
    assert_eq!(direct[0].mean_welfare, a.mean_welfare);
    assert_eq!(direct[0].welfare_iqm, a.welfare_iqm);
}

#[test]
fn ablation_of_untrained_agents_changes_nothing_measurable() {
    let dir = tempdir().unwrap();
    let cfg = config(&TINY_BANDIT.replace("budget = 128", "budget = 0"));
    commands::train(&cfg, dir.path()).unwrap();
    let rows = commands::ablate(
        &dir.path().join("final.ckpt"),
        &AblationMode::ALL,
        100,
        Some(4),
    )
    .unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        assert!(!rows[0].welfare().disjoint_from(&r.welfare()), "{rows:?}");
    }
}

#[test]
fn single_trial_ablation_has_no_interval() {
    let dir = tempdir().unwrap();
    commands::train(
        &config(&TINY_BANDIT.replace("budget = 128", "budget = 0")),
        dir.path(),
    )
    .unwrap();
    let rows = commands::ablate(
        &dir.path().join("final.ckpt"),
        &[AblationMode::ZeroMessage],
        1,
        None,
    )
    .unwrap();
    assert_eq!(rows[0].welfare_ci_lo, None);
    assert_eq!(rows[0].length_ci_hi, None);
}

#[test]
fn ablating_a_silent_condition_is_rejected() {
    let dir = tempdir().unwrap();
    let text = TINY_BANDIT
        .replace("condition = \"cpc\"", "condition = \"no-comm\"")
        .replace("budget = 128", "budget = 0");
    commands::train(&config(&text), dir.path()).unwrap();
    let e = commands::ablate(
        &dir.path().join("final.ckpt"),
        &[AblationMode::RandomMessage],
        10,
        None,
    )
    .err()
    .unwrap();
    assert_eq!(e.exit_code(), 1);
    assert!(e.to_string().contains("no-comm"), "{e}");

    let mut cfg = config(&text);
    cfg.ablation = AblationMode::ZeroMessage;
    assert_eq!(
        commands::train(&cfg, dir.path()).err().unwrap().exit_code(),
        1
    );
}

#[test]
fn configured_ablation_writes_a_report() {
    let dir = tempdir().unwrap();
    let mut cfg = config(TINY_BANDIT);
    cfg.ablation = AblationMode::RandomMessage;
    commands::train(&cfg, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(
        lines[1].starts_with("none,") && lines[2].starts_with("random,"),
        "{text}"
    );
}

fn manifest(dir: &Path, seeds: &str, conditions: &str) -> Manifest {
    let text = format!(
        r#"
conditions = {conditions}
seeds = {seeds}
metrics = ["welfare", "return_0"]
out = "sweep"

[base.run]
env = "bandit"
budget = 64
eval_every = 1
eval_episodes = 4

[base.trainer]
workers = 2
steps_per_worker = 16
"#
    );
    let path = dir.join("manifest.toml");
    write(&path, &text);
    Manifest::load(&path).unwrap()
}

#[test]
fn duplicate_seeds_are_rejected_before_training() {
    let dir = tempdir().unwrap();
    let m = manifest(dir.path(), "[1, 2, 1]", r#"["cpc"]"#);
    let e = sweep::run(&m, 1).err().unwrap();
    assert_eq!(e.exit_code(), 1);
    assert!(e.to_string().contains("seed 1"), "{e}");
    assert!(!dir.path().join("sweep").exists());
}

#[test]
fn single_run_sweep_leaves_interval_columns_empty() {
    let dir = tempdir().unwrap();
    let m = manifest(dir.path(), "[0]", r#"["cpc"]"#);
    sweep::run(&m, 1).unwrap();
    let rows = read_summary(&dir.path().join("sweep/summary.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 3);
    assert!(rows
        .iter()
        .all(|r| r.ci_lo.is_none() && r.ci_hi.is_none() && r.n_runs == 1));
    let text = std::fs::read_to_string(dir.path().join("sweep/summary.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().ends_with(",,,1"), "{text}");
}

#[test]
fn sweep_summarizes_across_seeds_and_resumes() {
    let dir = tempdir().unwrap();
    let m = manifest(dir.path(), "[0, 1, 2]", r#"["cpc", "no-comm"]"#);
    let first = sweep::run(&m, 2).unwrap();
    assert_eq!(first.runs.len(), 6);
    assert!(first.failed.is_empty());
    let welfare: Vec<_> = first
        .summary
        .iter()
        .filter(|p| p.metric == "welfare")
        .collect();
    assert_eq!(welfare.len(), 2 * 3);
    for p in &welfare {
        let (lo, hi) = p.ci.unwrap();
        assert!(lo <= p.iqm && p.iqm <= hi, "{p:?}");
        assert_eq!(p.n_runs, 3);
    }
    let ckpt = dir.path().join("sweep/cpc/seed_1/final.ckpt");
    let stamp = std::fs::metadata(&ckpt).unwrap().modified().unwrap();
    let summary = std::fs::read(dir.path().join("sweep/summary.csv")).unwrap();
    let second = sweep::run(&m, 1).unwrap();
    assert_eq!(std::fs::metadata(&ckpt).unwrap().modified().unwrap(), stamp);
    assert_eq!(
        std::fs::read(dir.path().join("sweep/summary.csv")).unwrap(),
        summary
    );
    assert_eq!(first.summary, second.summary);
}

#[test]
fn failed_runs_are_recorded_and_skipped() {
    let dir = tempdir().unwrap();
    let m = manifest(dir.path(), "[0, 1]", r#"["cpc"]"#);
    // a directory where the metrics file should go makes one run fail
    std::fs::create_dir_all(dir.path().join("sweep/cpc/seed_1/metrics.csv")).unwrap();
    let res = sweep::run(&m, 1).unwrap();
    assert_eq!(res.runs.len(), 1);
    assert_eq!(res.failed.len(), 1);
    assert_eq!(res.failed[0].seed, 1);
    let failed = std::fs::read_to_string(dir.path().join("sweep/failed.csv")).unwrap();
    assert!(failed.contains("cpc,1,"), "{failed}");
    assert!(res.summary.iter().all(|p| p.n_runs == 1));
}

#[test]
fn truncated_checkpoint_fails_cleanly() {
    let dir = tempdir().unwrap();
    commands::train(
        &config(&TINY_BANDIT.replace("budget = 128", "budget = 0")),
        dir.path(),
    )
    .unwrap();
    let path = dir.path().join("final.ckpt");
    let bytes = std::fs::read(&path).unwrap();
    write_bytes(&path, &bytes[..bytes.len() - 100]);
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("truncated"), "{err}");
}

fn write_bytes(path: &Path, bytes: &[u8]) {
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn unknown_keys_and_values_exit_with_validation_status() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("run.toml");
    write(
        &path,
        "[run]\nenv = \"bandit\"\ncondition = \"telepathy\"\n",
    );
    let out = bin()
        .args(["train", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("telepathy") && err.contains("condition"),
        "{err}"
    );

    write(
        &path,
        "[run]\nenv = \"bandit\"\ncondition = \"cpc\"\n\n[cpc]\ntemperature = 2.0\n",
    );
    let out = bin()
        .args(["train", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("temperature"), "{err}");
}

#[test]
fn binary_exit_codes() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(
        bin().arg("--version").output().unwrap().status.code(),
        Some(0)
    );
    assert_eq!(
        bin().arg("frobnicate").output().unwrap().status.code(),
        Some(1)
    );
    assert_eq!(
        bin().args(["eval"]).output().unwrap().status.code(),
        Some(1)
    );
    let missing = bin()
        .args(["eval", "--checkpoint", "/nonexistent/final.ckpt"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let bad_preset = bin()
        .args(["train", "--preset", "moon", "--condition", "cpc"])
        .output()
        .unwrap();
    assert_eq!(bad_preset.status.code(), Some(1));
}

#[test]
fn binary_trains_evaluates_and_ablates() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    write(&cfg, TINY_BANDIT);
    let run = dir.path().join("run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ckpt = run.join("final.ckpt");
    let out = bin()
        .args(["eval", "--episodes", "5", "--checkpoint"])
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.starts_with("condition,env,iteration,episodes,mean_welfare"),
        "{text}"
    );
    let out = bin()
        .args(["ablate", "--mode", "zero", "--trials", "5", "--checkpoint"])
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
}

#[test]
fn resolved_config_reloads_to_the_same_run() {
    let dir = tempdir().unwrap();
    let cfg = config(TINY_BANDIT);
    commands::train(&cfg, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("config.resolved")).unwrap();
    let again = RawConfig::parse(&text).unwrap().resolve().unwrap();
    assert_eq!(again.trainer, cfg.trainer);
    assert_eq!(
        TrainerConfig::defaults(EnvKind::Bandit, AgentCondition::Cpc).gamma,
        again.trainer.gamma
    );
}
