//! CARCA: context- and attribute-aware sequential recommendation with a
//! cross-attention target scorer.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, the gradient tape and gradient checking.
//! - [`data`]: interaction/attribute ingestion, calendar context features,
//!   leave-one-out splits and negative sampling.
//! - [`model`]: embedding pipeline, profile self-attention encoder and the
//!   target scorer, plus checkpoint I/O.
//! - [`training`]: masked list-wise BCE, L2, ADAM and the training loop.
//! - [`evaluation`]: ranking metrics and sampled-negative protocols.
//! - [`config`]: the run configuration file and ablation presets.

pub mod config;
pub mod data;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod training;
