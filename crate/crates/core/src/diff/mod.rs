//! Minimal reverse-mode autodiff: tape, parameter stores, MLPs and Adam.

mod adam;
pub mod gradcheck;
mod mlp;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{Activation, Mlp, MlpOutput};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{gelu, log_softmax_rows, sigmoid, softmax_rows, softplus, Tape, Var};
