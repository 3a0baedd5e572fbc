//! Masked denoising-diffusion reasoning over constraint puzzles: a small
//! autodiff engine, puzzle tasks with exact checkers, the masked sampler,
//! a residual conv denoiser, and policy-gradient fine-tuning.

pub mod denoiser;
pub mod diffusion;
pub mod harness;
pub mod puzzles;
pub mod rl;
pub mod rng;
pub mod tensor;

pub use denoiser::{Denoiser, DenoiserConfig, DenoiserError};
pub use diffusion::{make_schedule, DiffusionError, NoiseSchedule, ScheduleKind, Trajectory};
pub use harness::{Checkpoint, EvalReport, HarnessError, RunConfig, SlConfig};
pub use puzzles::{
    CheckMode, DiscreteSolution, GenOptions, MetricsReport, Payload, PuzzleError, PuzzleInstance,
    Task,
};
pub use rl::{EpochLog, RlConfig, RlError, RlOutcome};
pub use tensor::{AdamWConfig, Real, Tensor, TensorError};
