//! Decentralized multi-agent reinforcement learning where communication is
//! learned by collective predictive coding rather than by reward.

pub mod agents;
pub mod algo;
pub mod cpc;
pub mod diff;
pub mod env;
pub mod error;
pub mod eval;
pub mod rng;
pub mod stats;

pub use agents::{AgentBundle, AgentCondition};
pub use algo::{run_training, Trainer, TrainerConfig};
pub use cpc::{JointMessage, Message, StraightThrough};
pub use env::{EnvKind, InformedAgent};
pub use error::{Error, Result};
pub use eval::{AblationMode, RunRecord};
pub use stats::SummaryPoint;
