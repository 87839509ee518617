//! Train, sweep, ablate and evaluate MARL-CPC agents from config files.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod sweep;

pub use error::{CliError, Result};
