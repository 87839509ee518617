use std::path::{Path, PathBuf};

use marlcpc_core::eval::{evaluate, AblationMode};
use marlcpc_core::rng::{stream, tag};
use marlcpc_core::stats::{bootstrap_ci, iqm, DEFAULT_CONFIDENCE, DEFAULT_RESAMPLES};
use marlcpc_core::{AgentBundle, RunRecord, Trainer, TrainerConfig};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{io_at, CliError, Result};
use crate::metrics::MetricsWriter;

/// Evaluation round used for post-hoc evaluations, far above any training
/// iteration so their episode streams never coincide.
const POSTHOC_ROUND: u64 = 1 << 40;

pub struct TrainOutput {
    pub dir: PathBuf,
    pub records: Vec<RunRecord>,
    pub bundles: Vec<AgentBundle>,
}

/// Trains one run into `out`: `config.resolved` first, `metrics.csv` row by
/// row, checkpoints under `checkpoints/` every `checkpoint_every`
/// iterations, `final.ckpt` at the end, and `ablation.csv` when an
/// intervention is configured.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainOutput> {
    let t = &cfg.trainer;
    if cfg.ablation != AblationMode::None && !t.condition.communicates() {
        return Err(CliError::validation(format!(
            "ablation `{}` needs a communicating condition, not `{}`",
            cfg.ablation, t.condition
        )));
    }
    io_at(std::fs::create_dir_all(out), out)?;
    io_at(
        std::fs::write(out.join("config.resolved"), cfg.resolved()),
        out,
    )?;
    let mut writer = MetricsWriter::create(&out.join("metrics.csv"))?;
    let mut trainer = Trainer::new(t.clone()).map_err(|e| CliError::validation(e.to_string()))?;
    let ckpt_dir = out.join("checkpoints");
    let every = cfg.checkpoint_every;
    let batch = t.batch_size() as u64;
    // the trainer only speaks core errors; keep the original CLI error aside
    let mut failure = None;
    let run = trainer.run_with_hook(
        |rec| {
            writer.write(rec).map_err(|e| {
                let msg = e.to_string();
                failure = Some(e);
                marlcpc_core::Error::Numerical(msg)
            })
        },
        |it, bundles| {
            if every > 0 && it % every == 0 {
                let path = ckpt_dir.join(format!("iter_{it:06}.ckpt"));
                checkpoint::save(&path, t, it, it as u64 * batch, bundles)
                    .map_err(|e| marlcpc_core::Error::Numerical(e.to_string()))?;
            }
            Ok(())
        },
    );
    let records = match (run, failure) {
        (Ok(r), _) => r,
        (Err(_), Some(e)) => return Err(e),
        (Err(e), None) => return Err(e.into()),
    };
    checkpoint::save(
        &out.join("final.ckpt"),
        t,
        trainer.iteration(),
        trainer.env_steps(),
        &trainer.bundles,
    )?;
    if cfg.ablation != AblationMode::None {
        let rows = ablation_report(
            &trainer.bundles,
            t,
            &[AblationMode::None, cfg.ablation],
            t.eval_episodes,
            t.seed,
        )?;
        write_rows(&out.join("ablation.csv"), &rows)?;
    }
    Ok(TrainOutput {
        dir: out.to_path_buf(),
        records,
        bundles: trainer.bundles,
    })
}

/// IQM and percentile-bootstrap interval of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub iqm: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

impl Estimate {
    pub fn of(samples: &[f64], boot_seed: u64, stream_tag: u64) -> Result<Self> {
        let ci = if samples.len() >= 2 {
            let mut r = stream(boot_seed, &[tag::BOOTSTRAP, stream_tag]);
            Some(bootstrap_ci(
                samples,
                DEFAULT_RESAMPLES,
                DEFAULT_CONFIDENCE,
                &mut r,
            )?)
        } else {
            None
        };
        Ok(Self {
            iqm: iqm(samples)?,
            ci_lo: ci.map(|c| c.0),
            ci_hi: ci.map(|c| c.1),
        })
    }

    /// True when both intervals exist and do not overlap.
    pub fn disjoint_from(&self, other: &Estimate) -> bool {
        match (self.ci_lo, self.ci_hi, other.ci_lo, other.ci_hi) {
            (Some(a_lo), Some(a_hi), Some(b_lo), Some(b_hi)) => a_hi < b_lo || b_hi < a_lo,
            _ => false,
        }
    }
}

/// One intervention's outcome over `trials` episodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub trials: usize,
    pub welfare_iqm: f64,
    pub welfare_ci_lo: Option<f64>,
    pub welfare_ci_hi: Option<f64>,
    pub length_iqm: f64,
    pub length_ci_lo: Option<f64>,
    pub length_ci_hi: Option<f64>,
    pub mean_welfare: f64,
    pub mean_length: f64,
}

impl AblationRow {
    pub fn welfare(&self) -> Estimate {
        Estimate {
            iqm: self.welfare_iqm,
            ci_lo: self.welfare_ci_lo,
            ci_hi: self.welfare_ci_hi,
        }
    }
}

/// Evaluates frozen agents under each intervention on the same episode
/// streams.
pub fn ablation_report(
    bundles: &[AgentBundle],
    config: &TrainerConfig,
    modes: &[AblationMode],
    trials: usize,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    if trials == 0 {
        return Err(CliError::validation("--trials must be positive"));
    }
    if modes.iter().any(|&m| m != AblationMode::None) && !config.condition.communicates() {
        return Err(CliError::validation(format!(
            "cannot ablate messages of a `{}` run: it exchanges none",
            config.condition
        )));
    }
    if trials < 2 {
        log::warn!("a single trial has no confidence interval; CI columns left empty");
    }
    modes
        .iter()
        .enumerate()
        .map(|(i, &mode)| {
            let res = evaluate(
                bundles,
                config.env,
                config.informed,
                trials,
                mode,
                seed,
                POSTHOC_ROUND,
            )?;
            let welfare = res.episode_welfare();
            let lengths: Vec<f64> = res.lengths.iter().map(|&l| l as f64).collect();
            let w = Estimate::of(&welfare, seed, 2 * i as u64)?;
            let l = Estimate::of(&lengths, seed, 2 * i as u64 + 1)?;
            Ok(AblationRow {
                mode,
                trials,
                welfare_iqm: w.iqm,
                welfare_ci_lo: w.ci_lo,
                welfare_ci_hi: w.ci_hi,
                length_iqm: l.iqm,
                length_ci_lo: l.ci_lo,
                length_ci_hi: l.ci_hi,
                mean_welfare: welfare.iter().sum::<f64>() / trials as f64,
                mean_length: res.mean_length(),
            })
        })
        .collect()
}

pub fn ablate(
    path: &Path,
    modes: &[AblationMode],
    trials: usize,
    seed: Option<u64>,
) -> Result<Vec<AblationRow>> {
    let ck = checkpoint::load(path)?;
    let c = &ck.header.config;
    ablation_report(&ck.bundles, c, modes, trials, seed.unwrap_or(c.seed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub condition: String,
    pub env: String,
    pub iteration: usize,
    pub episodes: usize,
    pub mean_welfare: f64,
    pub welfare_iqm: f64,
    pub welfare_ci_lo: Option<f64>,
    pub welfare_ci_hi: Option<f64>,
    pub mean_length: f64,
    pub return_0: f64,
    pub return_1: f64,
}

pub fn eval_checkpoint(path: &Path, episodes: usize, seed: Option<u64>) -> Result<EvalRow> {
    if episodes == 0 {
        return Err(CliError::validation("--episodes must be positive"));
    }
    let ck = checkpoint::load(path)?;
    let c = &ck.header.config;
    let seed = seed.unwrap_or(c.seed);
    let res = evaluate(
        &ck.bundles,
        c.env,
        c.informed,
        episodes,
        AblationMode::None,
        seed,
        POSTHOC_ROUND,
    )?;
    let welfare = res.episode_welfare();
    let w = Estimate::of(&welfare, seed, 0)?;
    let means = res.mean_returns();
    Ok(EvalRow {
        condition: c.condition.to_string(),
        env: c.env.to_string(),
        iteration: ck.header.iteration,
        episodes,
        mean_welfare: welfare.iter().sum::<f64>() / episodes as f64,
        welfare_iqm: w.iqm,
        welfare_ci_lo: w.ci_lo,
        welfare_ci_hi: w.ci_hi,
        mean_length: res.mean_length(),
        return_0: means[0],
        return_1: means[1],
    })
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV text of `rows`, header included.
pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
