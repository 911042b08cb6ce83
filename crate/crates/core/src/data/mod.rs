//! Dataset ingestion, calendar context features, leave-one-out splits and
//! negative sampling.
//!
//! Item ids are 1-based; id `0` ([`PAD`]) marks padding in fixed-length
//! windows.

mod catalog;
mod context;
mod log;
mod sampling;
mod split;

use std::path::PathBuf;

use thiserror::Error;

pub use catalog::{load_attributes, ItemCatalog};
pub use context::{featurize_context, fit_normalizer, ContextFeaturizer, CONTEXT_DIM};
pub use log::{load_interactions, parse_interactions, InteractionLog, UserHistory, MIN_INTERACTIONS};
pub use sampling::{derive_rng, sample_eval_candidates, sample_negatives, SeededRng};
pub use split::{build_splits, EvalCase, SplitBundle, TrainingExample, UserRecord};

/// Padding item id.
pub const PAD: usize = 0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{source_name}:{line}: {message}")]
    Parse { source_name: String, line: usize, message: String },
    #[error("{source_name}:{line}: item {item} is not in the catalog (items 1..={item_count})")]
    UnknownItem { source_name: String, line: usize, item: usize, item_count: usize },
    #[error("attribute row missing for item {item}")]
    MissingAttributes { item: usize },
    #[error("cannot sample negatives: user interacted with {interacted} of {item_count} items")]
    Sampling { interacted: usize, item_count: usize },
    #[error("protocol needs {needed} negatives but only {available} non-interacted items exist")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}
