//! Differentiable substrate: tensors, a reverse-mode tape, attention,
//! transformer stacks, optimizer and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use adam::*;
pub use checkpoint::*;
pub use gradcheck::*;
pub use graph::{Gradients, Graph, Var};
pub use model::*;
pub use params::*;
pub use schedule::*;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite gradient in parameter {0:?}")]
    NonFiniteGradient(String),
    #[error("missing metadata: {0}")]
    MissingMetadata(String),
    #[error("token id {id} at position {position} is outside vocabulary of size {vocab}")]
    TokenOutOfVocab { position: usize, id: usize, vocab: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    PosEnc(#[from] crate::posenc::PosEncError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
