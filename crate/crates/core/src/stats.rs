//! Interquartile mean and percentile-bootstrap confidence intervals.

use rand::Rng;
use serde::Serialize;

use crate::error::{ensure, Result};

pub const DEFAULT_RESAMPLES: usize = 2000;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

/// Mean of the middle half of the samples.
///
/// Each sorted sample owns an equal slice of probability mass; the band from
/// the 25th to the 75th percentile is averaged, so samples straddling a
/// boundary count with the fraction of their mass inside the band. With `n`
/// divisible by 4 this drops exactly `n/4` samples from each end.
pub fn iqm(samples: &[f64]) -> Result<f64> {
    ensure!(!samples.is_empty(), "iqm of an empty sample");
    ensure!(
        samples.iter().all(|v| v.is_finite()),
        "iqm of non-finite samples"
    );
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    Ok(iqm_sorted(&xs))
}

fn iqm_sorted(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (lo, hi) = (0.25 * n, 0.75 * n);
    let mut acc = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
        acc += w * x;
    }
    acc / (hi - lo)
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile_sorted(xs: &[f64], q: f64) -> f64 {
    let pos = q * (xs.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < xs.len() {
        xs[i] + frac * (xs[i + 1] - xs[i])
    } else {
        xs[i]
    }
}

/// Percentile bootstrap interval of the IQM.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    samples: &[f64],
    resamples: usize,
    confidence: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    ensure!(
        samples.len() >= 2,
        "bootstrap needs at least two samples, got {}",
        samples.len()
    );
    ensure!(resamples >= 1, "bootstrap needs at least one resample");
    ensure!(
        confidence > 0.0 && confidence < 1.0,
        "confidence {confidence} outside (0, 1)"
    );
    ensure!(
        samples.iter().all(|v| v.is_finite()),
        "bootstrap of non-finite samples"
    );
    let n = samples.len();
    let mut buf = vec![0.0; n];
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = samples[rng.gen_range(0..n)];
        }
        buf.sort_by(f64::total_cmp);
        stats.push(iqm_sorted(&buf));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    Ok((
        percentile_sorted(&stats, alpha / 2.0),
        percentile_sorted(&stats, 1.0 - alpha / 2.0),
    ))
}

/// One aggregated row of plot-ready output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryPoint {
    pub metric: String,
    pub condition: String,
    pub env: String,
    pub steps: u64,
    pub iqm: f64,
    /// Absent with fewer than two runs.
    pub ci: Option<(f64, f64)>,
    pub n_runs: usize,
}

impl SummaryPoint {
    pub fn new<R: Rng + ?Sized>(
        metric: &str,
        condition: &str,
        env: &str,
        steps: u64,
        samples: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        let ci = if samples.len() >= 2 {
            Some(bootstrap_ci(
                samples,
                DEFAULT_RESAMPLES,
                DEFAULT_CONFIDENCE,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            metric: metric.to_string(),
            condition: condition.to_string(),
            env: env.to_string(),
            steps,
            iqm: iqm(samples)?,
            ci,
            n_runs: samples.len(),
        })
    }

    /// True when both intervals exist and do not overlap.
    pub fn disjoint_from(&self, other: &SummaryPoint) -> bool {
        match (self.ci, other.ci) {
            (Some((a_lo, a_hi)), Some((b_lo, b_hi))) => a_hi < b_lo || b_hi < a_lo,
            _ => false,
        }
    }
}
