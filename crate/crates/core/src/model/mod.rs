//! Embedding pipeline, profile encoder, target scorer and checkpoints.

mod checkpoint;
mod hyper;
mod network;
mod params;

use thiserror::Error;

use crate::data::DataError;
use crate::numerics::NumericsError;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use hyper::{FeatureLayout, HyperParams, PositionalMode, ResidualMode, ScoringMode, TargetSplit};
pub use network::{
    attention, embed_items, encode_profile, score_targets, self_attention_block, sinusoidal_encoding, Model, Network,
    SequenceInput,
};
pub use params::{AttentionIds, BlockIds, EmbeddingIds, Layout, ModelDims, ModelParams, ParamKind, ParamSpec, ScorerIds};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("incompatible parameters: {0}")]
    Incompatible(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("input shape: {0}")]
    Shape(String),
    #[error("item {0} is outside the model's catalog")]
    UnknownItem(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}
