//! Model assembly, training loop and persistence.

pub mod checkpoint;
mod features;
mod model;
mod record;
mod train;

pub use features::{Batch, FeatureSet, TextProviders, Vocabularies};
pub use model::{
    Architecture, Body, ForwardOutput, MultiTask, Prediction, RankModel, SingleTask, EMB_JOB, EMB_QUERY,
    EMB_RECRUITER, EMB_ROLE, EMB_TALENT,
};
pub use record::{load_jsonl, read_jsonl, write_jsonl, InteractionRecord, Role};
pub use train::{fit, train, train_with, write_loss_csv, LossRow, TrainEvent};

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::config::ConfigError;
use crate::heads::HeadsError;
use crate::moe::MoeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Moe(#[from] MoeError),
    #[error(transparent)]
    Heads(#[from] HeadsError),
    #[error("training data is empty")]
    EmptyDataset,
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("batch has no text features but the JD encoder is enabled")]
    MissingText,
    #[error("text embedder width {found} does not match text_dim {expected}")]
    TextDim { expected: usize, found: usize },
    #[error("vocabulary capacities do not match the config")]
    Vocabulary,
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParam(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
}
