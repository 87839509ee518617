use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use marlcpc_cli::commands::{self, rows_to_csv};
use marlcpc_cli::config::RawConfig;
use marlcpc_cli::sweep::{self, Manifest};
use marlcpc_cli::{CliError, Result};
use marlcpc_core::{AblationMode, AgentCondition};

#[derive(Parser)]
#[command(name = "marlcpc", version, about = "Train and inspect MARL-CPC agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// bandit, bandit-coop, observer or observer-desk.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        condition: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Environment steps to train for.
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every condition and seed of a manifest and summarize them.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        /// Runs trained at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare a checkpoint's welfare with and without message interventions.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// random, zero or none; repeatable. Defaults to all three.
        #[arg(long)]
        mode: Vec<String>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint's frozen policies.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            config,
            preset,
            condition,
            seed,
            budget,
            out,
        } => {
            let mut raw = match &config {
                Some(p) => RawConfig::load(p)?,
                None => RawConfig::default(),
            };
            if preset.is_some() {
                raw.run.preset = preset;
            }
            if let Some(c) = condition {
                let c: AgentCondition = c.parse().map_err(|e: marlcpc_core::Error| {
                    CliError::validation(format!("--condition: {e}"))
                })?;
                raw.run.condition = Some(c);
            }
            raw.run.seed = seed.or(raw.run.seed);
            raw.run.budget = budget.or(raw.run.budget);
            raw.run.out = out.or(raw.run.out);
            let cfg = raw.resolve()?;
            let dir = cfg.out_dir();
            let res = commands::train(&cfg, &dir)?;
            if let Some(last) = res.records.last() {
                println!(
                    "{} {} seed {}: welfare {:.4} after {} steps ({})",
                    last.env,
                    last.condition,
                    last.seed,
                    last.welfare,
                    last.env_steps,
                    dir.display()
                );
            }
        }
        Command::Sweep { manifest, jobs } => {
            if jobs == 0 {
                return Err(CliError::validation("--jobs must be positive"));
            }
            let m = Manifest::load(&manifest)?;
            let res = sweep::run(&m, jobs)?;
            println!(
                "{} runs finished, {} failed; summary in {}",
                res.runs.len(),
                res.failed.len(),
                m.out.join("summary.csv").display()
            );
            if !res.failed.is_empty() {
                return Err(CliError::runtime(format!(
                    "{} run(s) failed, see failed.csv",
                    res.failed.len()
                )));
            }
        }
        Command::Ablate {
            checkpoint,
            mode,
            trials,
            seed,
        } => {
            let modes: Vec<AblationMode> = if mode.is_empty() {
                AblationMode::ALL.to_vec()
            } else {
                mode.iter()
                    .map(|m| {
                        m.parse().map_err(|e: marlcpc_core::Error| {
                            CliError::validation(format!("--mode: {e}"))
                        })
                    })
                    .collect::<Result<_>>()?
            };
            let rows = commands::ablate(&checkpoint, &modes, trials, seed)?;
            print!("{}", rows_to_csv(&rows)?);
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            let row = commands::eval_checkpoint(&checkpoint, episodes, seed)?;
            print!("{}", rows_to_csv(&[row])?);
        }
    }
    Ok(())
}
