//! Dense networks with exact reverse-mode gradients, Adam, and Polyak averaging.

mod io;
mod mlp;
mod optim;

use thiserror::Error;

pub use io::{NamedTensor, ParamContainer, PARAM_FORMAT_VERSION};
pub use mlp::{hcat, polyak_update, row_vec, Activation, LayerParams, MlpSpec, ParamSet, Tape};
pub use optim::{AdamConfig, AdamState, ScalarAdam};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("parameter shapes do not match")]
    ShapeMismatch,
    #[error("polyak rate must lie in (0, 1], got {0}")]
    InvalidTau(f64),
    #[error("non-finite gradient, update skipped")]
    NonFiniteGradient,
    #[error("unsupported parameter format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("corrupt parameter container: {0}")]
    Corrupt(String),
}
