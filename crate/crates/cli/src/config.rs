//! Run configuration files, presets and the resolved-config dump.
//!
//! A config is TOML with four optional sections; every key is optional
//! except `run.env` and `run.condition` (either may come from a preset or the
//! command line instead):
//!
//! ```toml
//! [run]
//! preset = "observer-desk"
//! env = "observer"
//! condition = "cpc"
//! seed = 3
//! budget = 500000
//! eval_every = 10
//! eval_episodes = 100
//! checkpoint_every = 0
//! ablation = "none"
//!
//! [env]
//! informed = "0"
//!
//! [cpc]
//! k = 20
//! beta = 1.0
//! straight_through = "elementwise"
//!
//! [trainer]
//! learning_rate = 0.00025
//! minibatches = 4
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use marlcpc_core::eval::AblationMode;
use marlcpc_core::{AgentCondition, EnvKind, InformedAgent, StraightThrough, TrainerConfig};
use serde::Deserialize;

use crate::error::{io_at, CliError, Result};

/// Named starting points; each fixes the environment and the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Bandit,
    BanditCoop,
    Observer,
    ObserverDesk,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Bandit,
        Preset::BanditCoop,
        Preset::Observer,
        Preset::ObserverDesk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Bandit => "bandit",
            Preset::BanditCoop => "bandit-coop",
            Preset::Observer => "observer",
            Preset::ObserverDesk => "observer-desk",
        }
    }

    pub fn env(self) -> EnvKind {
        match self {
            Preset::Bandit => EnvKind::Bandit,
            Preset::BanditCoop => EnvKind::BanditCoop,
            Preset::Observer | Preset::ObserverDesk => EnvKind::Observer,
        }
    }

    pub fn budget(self) -> u64 {
        match self {
            Preset::ObserverDesk => 500_000,
            _ => TrainerConfig::defaults(self.env(), AgentCondition::Cpc).budget,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
                CliError::validation(format!(
                    "unknown preset `{s}`, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub run: RawRun,
    #[serde(default)]
    pub env: RawEnv,
    #[serde(default)]
    pub cpc: RawCpc,
    #[serde(default)]
    pub trainer: RawTrainer,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRun {
    pub preset: Option<String>,
    pub env: Option<EnvKind>,
    pub condition: Option<AgentCondition>,
    pub seed: Option<u64>,
    pub budget: Option<u64>,
    pub eval_every: Option<usize>,
    pub eval_episodes: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub ablation: Option<AblationMode>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEnv {
    pub informed: Option<InformedAgent>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCpc {
    pub k: Option<usize>,
    pub beta: Option<f64>,
    pub straight_through: Option<StraightThrough>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTrainer {
    pub learning_rate: Option<f64>,
    pub gamma: Option<f64>,
    pub gae_lambda: Option<f64>,
    pub clip_eps: Option<f64>,
    pub value_coef: Option<f64>,
    pub entropy_coef: Option<f64>,
    pub minibatches: Option<usize>,
    pub epochs: Option<usize>,
    pub normalize_advantages: Option<bool>,
    pub workers: Option<usize>,
    pub steps_per_worker: Option<usize>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::validation(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io_at(std::fs::read_to_string(path), path)?;
        toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("invalid config {}: {e}", path.display())))
    }

    /// `other`'s keys win.
    pub fn merge(mut self, other: &RawConfig) -> Self {
        macro_rules! take {
            ($sec:ident: $($f:ident),+) => {
                $(if other.$sec.$f.is_some() { self.$sec.$f = other.$sec.$f.clone(); })+
            };
        }
        take!(run: preset, env, condition, seed, budget, eval_every, eval_episodes, checkpoint_every, ablation, out);
        take!(env: informed);
        take!(cpc: k, beta, straight_through);
        take!(trainer: learning_rate, gamma, gae_lambda, clip_eps, value_coef, entropy_coef, minibatches, epochs,
            normalize_advantages, workers, steps_per_worker);
        self
    }

    /// Defaults for the environment, then the preset, then every key given.
    pub fn resolve(&self) -> Result<RunConfig> {
        let preset = self
            .run
            .preset
            .as_deref()
            .map(str::parse::<Preset>)
            .transpose()?;
        let env = match (self.run.env, preset) {
            (Some(e), Some(p)) if e != p.env() => {
                return Err(CliError::validation(format!(
                    "run.env = \"{e}\" contradicts preset `{}`",
                    p.name()
                )))
            }
            (Some(e), _) => e,
            (None, Some(p)) => p.env(),
            (None, None) => {
                return Err(CliError::validation("missing key `run.env` (or a preset)"))
            }
        };
        let condition = self
            .run
            .condition
            .ok_or_else(|| CliError::validation("missing key `run.condition`"))?;
        let mut t = TrainerConfig::defaults(env, condition);
        if let Some(p) = preset {
            t.budget = p.budget();
        }
        let r = &self.run;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(t.seed, r.seed);
        set!(t.budget, r.budget);
        set!(t.eval_every, r.eval_every);
        set!(t.eval_episodes, r.eval_episodes);
        set!(t.informed, self.env.informed);
        set!(t.k, self.cpc.k);
        set!(t.beta, self.cpc.beta);
        set!(t.straight_through, self.cpc.straight_through);
        let tr = &self.trainer;
        set!(t.learning_rate, tr.learning_rate);
        set!(t.gamma, tr.gamma);
        set!(t.gae_lambda, tr.gae_lambda);
        set!(t.clip_eps, tr.clip_eps);
        set!(t.value_coef, tr.value_coef);
        set!(t.entropy_coef, tr.entropy_coef);
        set!(t.minibatches, tr.minibatches);
        set!(t.epochs, tr.epochs);
        set!(t.normalize_advantages, tr.normalize_advantages);
        set!(t.workers, tr.workers);
        set!(t.steps_per_worker, tr.steps_per_worker);
        t.validate()
            .map_err(|e| CliError::validation(e.to_string()))?;
        Ok(RunConfig {
            trainer: t,
            preset,
            checkpoint_every: r.checkpoint_every.unwrap_or(0),
            ablation: r.ablation.unwrap_or_default(),
            out: r.out.clone(),
        })
    }
}

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub preset: Option<Preset>,
    /// Iterations between intermediate checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Intervention compared against the plain policy after training.
    pub ablation: AblationMode,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Output directory: explicit, else under `MARLCPC_OUT`, else under `runs/`.
    pub fn out_dir(&self) -> PathBuf {
        if let Some(o) = &self.out {
            return o.clone();
        }
        let root =
            std::env::var_os("MARLCPC_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        let t = &self.trainer;
        root.join(format!("{}-{}-seed{}", t.env, t.condition, t.seed))
    }

    /// TOML of every effective setting. Defaults chosen where the method
    /// leaves a value open carry a `# gap-fill` marker.
    pub fn resolved(&self) -> String {
        let t = &self.trainer;
        let d = TrainerConfig::defaults(t.env, t.condition);
        let bandit = t.env.is_bandit();
        let mut out = Dump::default();
        let q = |v: &dyn std::fmt::Display| format!("\"{v}\"");
        let f = |v: f64| format!("{v:?}");

        out.section("run");
        out.kv("env", q(&t.env), false);
        out.kv("condition", q(&t.condition), false);
        out.kv("seed", t.seed, false);
        out.kv("budget", t.budget, false);
        out.kv("eval_every", t.eval_every, t.eval_every == d.eval_every);
        out.kv(
            "eval_episodes",
            t.eval_episodes,
            t.eval_episodes == d.eval_episodes,
        );
        out.kv("checkpoint_every", self.checkpoint_every, false);
        out.kv("ablation", q(&self.ablation), false);
        out.section("env");
        out.kv(
            "informed",
            q(&informed_name(t.informed)),
            t.informed == d.informed,
        );
        out.section("cpc");
        out.kv("k", t.k, false);
        out.kv("beta", f(t.beta), false);
        out.kv(
            "straight_through",
            q(&straight_through_name(t.straight_through)),
            t.straight_through == d.straight_through,
        );
        out.section("trainer");
        out.kv("learning_rate", f(t.learning_rate), false);
        out.kv("gamma", f(t.gamma), false);
        out.kv("gae_lambda", f(t.gae_lambda), t.gae_lambda == d.gae_lambda);
        out.kv("clip_eps", f(t.clip_eps), false);
        out.kv("value_coef", f(t.value_coef), false);
        out.kv("entropy_coef", f(t.entropy_coef), false);
        out.kv(
            "minibatches",
            t.minibatches,
            bandit && t.minibatches == d.minibatches,
        );
        out.kv("epochs", t.epochs, t.epochs == d.epochs);
        out.kv(
            "normalize_advantages",
            t.normalize_advantages,
            t.normalize_advantages == d.normalize_advantages,
        );
        out.kv("workers", t.workers, bandit && t.workers == d.workers);
        out.kv(
            "steps_per_worker",
            t.steps_per_worker,
            bandit && t.steps_per_worker == d.steps_per_worker,
        );
        out.0
    }
}

#[derive(Default)]
struct Dump(String);

impl Dump {
    fn section(&mut self, name: &str) {
        if !self.0.is_empty() {
            self.0.push('\n');
        }
        let _ = writeln!(self.0, "[{name}]");
    }

    fn kv(&mut self, key: &str, value: impl std::fmt::Display, gap_fill: bool) {
        let mark = if gap_fill { "  # gap-fill" } else { "" };
        let _ = writeln!(self.0, "{key} = {value}{mark}");
    }
}

fn informed_name(i: InformedAgent) -> &'static str {
    match i {
        InformedAgent::First => "0",
        InformedAgent::Second => "1",
        InformedAgent::Random => "random",
    }
}

fn straight_through_name(s: StraightThrough) -> &'static str {
    match s {
        StraightThrough::Elementwise => "elementwise",
        StraightThrough::Broadcast => "broadcast",
    }
}
