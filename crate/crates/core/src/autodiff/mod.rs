//! Minimal reverse-mode differentiation engine and optimizer.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::AdamState;
pub use graph::{Activation, Elementwise, Gradients, Graph, NodeId};
pub(crate) use graph::sigmoid;
pub use params::ModelParams;
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength { len: usize, rows: usize, cols: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("dropout rate {0} outside [0, 1)")]
    DropoutRate(f64),
    #[error("index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("segment offsets do not cover {keys} keys for {rows} queries")]
    Segments { rows: usize, keys: usize },
    #[error("{op} needs at least one input")]
    Empty { op: &'static str },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
}
