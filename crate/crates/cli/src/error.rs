use std::path::PathBuf;

use carca_core::config::ConfigError;
use carca_core::data::DataError;
use carca_core::evaluation::EvaluationError;
use carca_core::model::ModelError;
use carca_core::training::TrainingError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 0 success, 1 usage or configuration, 2 data, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Model(m) | CliError::Training(TrainingError::Model(m)) | CliError::Evaluation(EvaluationError::Model(m)) => match m {
                ModelError::Config(_) | ModelError::Incompatible(_) | ModelError::Version { .. } => 1,
                _ => 2,
            },
            CliError::Training(TrainingError::Diverged { .. }) => 3,
            CliError::Training(TrainingError::Config(_)) => 1,
            CliError::Training(_) | CliError::Data(_) | CliError::Evaluation(_) | CliError::Io { .. } => 2,
        }
    }
}

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
