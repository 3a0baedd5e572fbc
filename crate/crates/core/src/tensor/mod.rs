//! Dense arrays, a small reverse-mode differentiation graph, and AdamW.

mod array;
mod graph;
mod kernels;
mod optim;
mod params;

pub use array::{Real, Tensor};
pub use graph::{Graph, NodeId};
pub use optim::{AdamWConfig, AdamWState};
pub use params::{chunked_backward, Gradients, ParameterSet};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite values produced by {0}")]
    NonFinite(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph has no bound parameter set")]
    Unbound,
    #[error("graph already bound to a parameter set")]
    AlreadyBound,
    #[error("parameter set changed since the graph was recorded")]
    StaleGraph,
    #[error("duplicate parameter name {0}")]
    DuplicateName(String),
    #[error("optimizer hyperparameters out of range")]
    InvalidHyperparameter,
}
