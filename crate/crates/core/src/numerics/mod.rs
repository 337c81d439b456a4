//! Dense tensors, tape-based autodiff, MLPs and Adam.

mod adam;
mod checkpoint;
mod graph;
mod mlp;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, NodeId};
pub use mlp::{sigmoid_tensor, Activation, Layer, MlpParams, MlpTrace};
pub use tensor::{mish, mish_d1, mish_d2, sigmoid, softplus, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("expected gradients for {expected} parameters, got {got}")]
    MissingGradient { expected: usize, got: usize },
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
}
