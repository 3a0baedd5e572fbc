//! Run configuration, dataset files, training drivers, checkpoints and reports
//! behind the command-line tool.

pub mod check;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod fsutil;
pub mod train;

pub use check::{check_files, CheckOutcome, CheckReport};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{RunConfig, SlConfig};
pub use data::{cmd_gen, dataset_file, load_split, GenSummary, Split};
pub use eval::{cmd_eval, embed_maze, EvalReport};
pub use fsutil::{write_atomic, DirLock};
pub use train::{cmd_train_rl, cmd_train_sl, train_sl, SlEpochLog, SlOutcome};

use crate::denoiser::DenoiserError;
use crate::diffusion::DiffusionError;
use crate::puzzles::PuzzleError;
use crate::rl::RlError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("cannot access {0}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Puzzle(#[from] PuzzleError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
        move |e| HarnessError::Io(path.display().to_string(), e)
    }
}
