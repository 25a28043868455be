use thiserror::Error;

use crate::synth::SynthError;
use crate::tensor::{GradCheckError, TensorError};

/// Errors raised by the language modules, the baseline model and training.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("class index {index} outside vocabulary of {len}")]
    Vocabulary { index: usize, len: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("cannot build a context sequence for a scene without entities")]
    EmptySequence,
    #[error(transparent)]
    GradCheck(#[from] GradCheckError),
    #[error("non-finite loss at step {step}: cross-entropy {ce}, mse {mse}")]
    NonFinite { step: usize, ce: f64, mse: f64 },
}
