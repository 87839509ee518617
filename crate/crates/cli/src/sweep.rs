//! Multi-seed, multi-condition sweeps.
//!
//! A manifest is TOML:
//!
//! ```toml
//! preset = "bandit"            # or env via [base.run]
//! config = "base.toml"         # optional, relative to the manifest
//! conditions = ["cpc", "no-comm"]
//! seeds = [0, 1, 2]
//! metrics = ["welfare"]        # default: every metrics.csv column
//! out = "sweeps/bandit"
//!
//! [base.trainer]               # any config keys, applied over `config`
//! learning_rate = 0.0003
//! ```
//!
//! Runs land in `<out>/<condition>/seed_<seed>/`. A run whose `final.ckpt`
//! exists next to an identical `config.resolved` is reused, not retrained.
//! Failed runs are listed in `<out>/failed.csv` and left out of
//! `<out>/summary.csv`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use marlcpc_core::rng::{stream, tag};
use marlcpc_core::{AgentCondition, SummaryPoint};
use serde::{Deserialize, Serialize};

use crate::commands;
use crate::config::{RawConfig, RunConfig};
use crate::error::{io_at, CliError, Result};
use crate::metrics::{read_metrics, write_summary, MetricsRow, METRICS};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub conditions: Vec<AgentCondition>,
    pub seeds: Vec<u64>,
    pub metrics: Option<Vec<String>>,
    pub out: PathBuf,
    #[serde(default)]
    pub base: RawConfig,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::validation(format!("invalid manifest: {e}")))
    }

    /// Reads a manifest; relative `config` and `out` paths are taken from the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = io_at(std::fs::read_to_string(path), path)?;
        let mut m: Manifest = toml::from_str(&text).map_err(|e| {
            CliError::validation(format!("invalid manifest {}: {e}", path.display()))
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if let Some(c) = &m.config {
            m.config = Some(dir.join(c));
        }
        m.out = dir.join(&m.out);
        Ok(m)
    }

    pub fn metrics(&self) -> Vec<String> {
        self.metrics
            .clone()
            .unwrap_or_else(|| METRICS.iter().map(|s| s.to_string()).collect())
    }

    /// Every run of the sweep, checked before anything is trained.
    pub fn plan(&self) -> Result<Vec<PlannedRun>> {
        if self.conditions.is_empty() || self.seeds.is_empty() {
            return Err(CliError::validation(
                "a sweep needs at least one condition and one seed",
            ));
        }
        if let Some(d) = first_duplicate(&self.seeds) {
            return Err(CliError::validation(format!("seed {d} is listed twice")));
        }
        if let Some(d) = first_duplicate(&self.conditions) {
            return Err(CliError::validation(format!(
                "condition `{d}` is listed twice"
            )));
        }
        for m in self.metrics() {
            if !METRICS.contains(&m.as_str()) {
                return Err(CliError::validation(format!(
                    "unknown metric `{m}`, expected one of {}",
                    METRICS.join(", ")
                )));
            }
        }
        let mut base = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        base = base.merge(&self.base);
        if self.preset.is_some() {
            base.run.preset = self.preset.clone();
        }
        let mut runs = Vec::new();
        for &condition in &self.conditions {
            for &seed in &self.seeds {
                let mut raw = base.clone();
                raw.run.condition = Some(condition);
                raw.run.seed = Some(seed);
                let dir = self.out.join(condition.name()).join(format!("seed_{seed}"));
                raw.run.out = Some(dir.clone());
                runs.push(PlannedRun {
                    condition,
                    seed,
                    dir,
                    config: raw.resolve()?,
                });
            }
        }
        Ok(runs)
    }
}

fn first_duplicate<T: Ord + Copy>(xs: &[T]) -> Option<T> {
    let mut seen = BTreeSet::new();
    xs.iter().copied().find(|x| !seen.insert(*x))
}

#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub condition: AgentCondition,
    pub seed: u64,
    pub dir: PathBuf,
    pub config: RunConfig,
}

impl PlannedRun {
    fn is_complete(&self) -> bool {
        self.dir.join("final.ckpt").is_file()
            && std::fs::read_to_string(self.dir.join("config.resolved"))
                .is_ok_and(|c| c == self.config.resolved())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedRun {
    pub condition: AgentCondition,
    pub seed: u64,
    pub error: String,
}

pub struct SweepOutput {
    /// Metrics of every finished run, in plan order.
    pub runs: Vec<(PlannedRun, Vec<MetricsRow>)>,
    pub failed: Vec<FailedRun>,
    pub summary: Vec<SummaryPoint>,
}

/// Trains every planned run on at most `jobs` threads, then aggregates.
pub fn run(manifest: &Manifest, jobs: usize) -> Result<SweepOutput> {
    let plan = manifest.plan()?;
    io_at(std::fs::create_dir_all(&manifest.out), &manifest.out)?;
    let jobs = jobs.clamp(1, plan.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<MetricsRow>>>>> =
        Mutex::new((0..plan.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(p) = plan.get(i) else { break };
                let res = run_one(p);
                results.lock().unwrap()[i] = Some(res);
            });
        }
    });

    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for (p, res) in plan.into_iter().zip(results.into_inner().unwrap()) {
        match res.expect("every planned run was attempted") {
            Ok(rows) => runs.push((p, rows)),
            Err(e) => {
                log::warn!("{} seed {} failed: {e}", p.condition, p.seed);
                failed.push(FailedRun {
                    condition: p.condition,
                    seed: p.seed,
                    error: e.to_string(),
                });
            }
        }
    }
    if !failed.is_empty() {
        commands::write_rows(&manifest.out.join("failed.csv"), &failed)?;
    }
    let summary = summarize(&runs, &manifest.metrics())?;
    write_summary(&manifest.out.join("summary.csv"), &summary)?;
    Ok(SweepOutput {
        runs,
        failed,
        summary,
    })
}

fn run_one(p: &PlannedRun) -> Result<Vec<MetricsRow>> {
    if p.is_complete() {
        log::info!(
            "{} seed {}: reusing {}",
            p.condition,
            p.seed,
            p.dir.display()
        );
        return read_metrics(&p.dir.join("metrics.csv"));
    }
    log::info!(
        "{} seed {}: training into {}",
        p.condition,
        p.seed,
        p.dir.display()
    );
    let out = commands::train(&p.config, &p.dir)?;
    Ok(out.records.iter().map(MetricsRow::from).collect())
}

/// IQM and bootstrap interval across runs, per condition, metric and
/// evaluation point. Only points every run reached are reported.
pub fn summarize(
    runs: &[(PlannedRun, Vec<MetricsRow>)],
    metrics: &[String],
) -> Result<Vec<SummaryPoint>> {
    let mut common: Option<BTreeSet<u64>> = None;
    for (_, rows) in runs {
        let steps: BTreeSet<u64> = rows.iter().map(|r| r.env_steps).collect();
        common = Some(match common {
            None => steps,
            Some(c) => c.intersection(&steps).copied().collect(),
        });
    }
    let common = common.unwrap_or_default();
    let mut conditions: Vec<AgentCondition> = Vec::new();
    for (p, _) in runs {
        if !conditions.contains(&p.condition) {
            conditions.push(p.condition);
        }
    }
    let mut out = Vec::new();
    for (ci, &cond) in conditions.iter().enumerate() {
        let group: Vec<&(PlannedRun, Vec<MetricsRow>)> =
            runs.iter().filter(|(p, _)| p.condition == cond).collect();
        if group.len() < 2 {
            log::warn!(
                "`{cond}` has {} finished run(s); no confidence interval",
                group.len()
            );
        }
        let env = group[0].0.config.trainer.env.to_string();
        for (mi, metric) in metrics.iter().enumerate() {
            for &steps in &common {
                let samples: Vec<f64> = group
                    .iter()
                    .map(|(_, rows)| {
                        let row = rows
                            .iter()
                            .find(|r| r.env_steps == steps)
                            .expect("step is common");
                        row.metric(metric).expect("metric names were validated")
                    })
                    .collect();
                let mut rng = stream(0, &[tag::BOOTSTRAP, ci as u64, mi as u64, steps]);
                out.push(SummaryPoint::new(
                    metric,
                    cond.name(),
                    &env,
                    steps,
                    &samples,
                    &mut rng,
                )?);
            }
        }
    }
    Ok(out)
}
