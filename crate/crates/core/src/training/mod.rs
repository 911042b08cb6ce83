//! List-wise training: masked binary cross-entropy over positive and
//! context-matched negative lists, L2 on weight matrices, ADAM, and the
//! epoch loop with validation-based model selection.

mod loss;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::evaluation::EvaluationError;
use crate::model::{Model, ModelError};
use crate::numerics::NumericsError;

pub use loss::{all_masked_warnings, bce_loss, l2_penalty};
pub use optim::{adam_step, OptimizerState};
pub use trainer::{dims_for, train, train_step, train_with, EpochRecord, LossObjective, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("gradient non-finite for {param} at ({row}, {col})")]
    NonFiniteGradient { param: String, row: usize, col: usize },
    #[error("gradient set mismatch: {0}")]
    Gradient(String),
    #[error("negative context differs from positive context for user {user}")]
    ContextMismatch { user: usize },
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String, last_good: Box<Model> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation rounds without improvement before stopping; 0 runs every
    /// epoch.
    pub patience: usize,
    /// Epochs between validation rounds; 0 disables validation and keeps
    /// the final parameters.
    pub eval_every: usize,
    pub validation_negatives: usize,
    pub validation_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 128, seed: 42, patience: 10, eval_every: 5, validation_negatives: 100, validation_seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.epochs == 0 {
            return Err(TrainingError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainingError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}
