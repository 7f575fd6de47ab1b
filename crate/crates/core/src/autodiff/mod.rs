//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! then walks the record in reverse and accumulates gradients into every node
//! that (transitively) depends on a trainable leaf. The operation set is the
//! one the actor and critic networks need and nothing more.

mod functions;
pub mod gradcheck;
mod graph;
pub mod optim;
mod tensor;

pub use functions::{gru_cell, kl_categorical, kl_categorical_var, GruParams};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of bounds ({bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}
