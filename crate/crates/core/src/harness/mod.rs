//! Replay, the interleaved act/learn loop, evaluation, metrics, and checkpoints.

mod buffer;
mod checkpoint;
mod eval;
mod metrics;
mod train;

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use buffer::{ReplayBuffer, Transition};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use eval::{evaluate, ConvergenceDetector, EpisodeResult, EvalReport, PathHistogram};
pub use metrics::{MetricsRow, MetricsWriter, METRICS_HEADER};
pub use train::{run_name, train, train_in, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint not found: {0}")]
    CheckpointNotFound(PathBuf),
    #[error("run directory already exists: {0}")]
    RunExists(PathBuf),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}

/// Independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Environment = 0,
    Action = 1,
    Buffer = 2,
    Init = 3,
}

/// The stream `which` of the run seeded with `seed`.
pub fn stream_rng(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Generator for evaluation episode `index`; independent of the training streams.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_E7A1_0000_0000);
    rng.set_stream(index);
    rng
}
