//! CSV schemas.
//!
//! `metrics.csv`, one row per evaluation point of a run:
//! `seed,iteration,env_steps,episodes,condition,env,welfare,episode_length,return_0,return_1`.
//!
//! `summary.csv`, one row per metric, condition and evaluation point of a
//! sweep: `metric,condition,env,steps,iqm,ci_lo,ci_hi,n_runs` (the interval
//! columns are empty with fewer than two runs).

use std::fs::File;
use std::path::Path;

use marlcpc_core::{AgentCondition, EnvKind, RunRecord, SummaryPoint};
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError, Result};

pub const METRICS: [&str; 4] = ["welfare", "episode_length", "return_0", "return_1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub iteration: usize,
    pub env_steps: u64,
    pub episodes: u64,
    pub condition: AgentCondition,
    pub env: EnvKind,
    pub welfare: f64,
    pub episode_length: f64,
    pub return_0: f64,
    pub return_1: f64,
}

impl From<&RunRecord> for MetricsRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            seed: r.seed,
            iteration: r.iteration,
            env_steps: r.env_steps,
            episodes: r.episodes,
            condition: r.condition,
            env: r.env,
            welfare: r.welfare,
            episode_length: r.episode_length,
            return_0: r.agent_returns[0],
            return_1: r.agent_returns[1],
        }
    }
}

impl MetricsRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "welfare" => Some(self.welfare),
            "episode_length" => Some(self.episode_length),
            "return_0" => Some(self.return_0),
            "return_1" => Some(self.return_1),
            _ => None,
        }
    }
}

/// Row-at-a-time writer that flushes after every row, so an aborted run
/// keeps everything evaluated so far.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = io_at(File::create(path), path)?;
        Ok(Self {
            inner: csv::Writer::from_writer(file),
        })
    }

    pub fn write(&mut self, rec: &RunRecord) -> Result<()> {
        self.inner.serialize(MetricsRow::from(rec))?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub condition: String,
    pub env: String,
    pub steps: u64,
    pub iqm: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n_runs: usize,
}

impl From<&SummaryPoint> for SummaryRow {
    fn from(p: &SummaryPoint) -> Self {
        Self {
            metric: p.metric.clone(),
            condition: p.condition.clone(),
            env: p.env.clone(),
            steps: p.steps,
            iqm: p.iqm,
            ci_lo: p.ci.map(|c| c.0),
            ci_hi: p.ci.map(|c| c.1),
            n_runs: p.n_runs,
        }
    }
}

pub fn write_summary(path: &Path, points: &[SummaryPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    for p in points {
        w.serialize(SummaryRow::from(p))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SummaryRow>, _>>()
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}
