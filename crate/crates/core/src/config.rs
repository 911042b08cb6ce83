//! Run configuration files and ablation presets.
//!
//! A config is TOML with optional top-level `preset` and `ablation` keys
//! and the sections `[paths]`, `[model]`, `[train]`, `[protocol]` and
//! `[features]`. Keys left out of `[model]` come from the preset (or the
//! default hyper-parameters); the ablation id is applied on top when the
//! effective hyper-parameters are resolved.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::Protocol;
use crate::model::{FeatureLayout, HyperParams, ModelError, PositionalMode, ResidualMode, TargetSplit};
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{what} not found: {}", path.display())]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl From<ModelError> for ConfigError {
    fn from(e: ModelError) -> Self {
        Self::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub interactions: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attributes: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Features {
    pub use_attributes: bool,
    pub use_context: bool,
}

impl Default for Features {
    fn default() -> Self {
        Self { use_attributes: true, use_context: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default = "default_ablation")]
    pub ablation: u8,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub model: HyperParams,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub features: Features,
}

fn default_ablation() -> u8 {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            ablation: 1,
            paths: Paths::default(),
            model: HyperParams::default(),
            train: TrainConfig::default(),
            protocol: Protocol::default(),
            features: Features::default(),
        }
    }
}

/// Display name of an ablation configuration.
pub fn ablation_name(id: u8) -> Option<&'static str> {
    Some(match id {
        1 => "default",
        2 => "additive residual",
        3 => "concatenate all features",
        4 => "concatenate item features",
        5 => "positional encoding",
        6 => "self-attention on output",
        7 => "single target split",
        8 => "transformer",
        _ => return None,
    })
}

/// `hp` with the overrides of ablation `id` applied. Id 8 is the
/// composition of 2, 3, 5 and 7.
pub fn apply_ablation(hp: &HyperParams, id: u8) -> Result<HyperParams, ConfigError> {
    let mut out = hp.clone();
    match id {
        1 => {}
        2 => out.residual_mode = ResidualMode::Additive,
        3 => out.feature_layout = FeatureLayout::ConcatAll,
        4 => out.feature_layout = FeatureLayout::ConcatItem,
        5 => out.positional_mode = PositionalMode::PositionalEncoding,
        6 => out.output_blocks = 1,
        7 => out.target_split = TargetSplit::SingleTarget,
        8 => {
            for part in [2, 3, 5, 7] {
                out = apply_ablation(&out, part)?;
            }
        }
        other => return Err(ConfigError::Invalid(format!("ablation id {other} is not in 1..=8"))),
    }
    Ok(out)
}

impl RunConfig {
    /// Parses TOML, filling unspecified `[model]` keys from `preset`.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(name) = doc.get("preset").and_then(|v| v.as_str()) {
            let base = HyperParams::preset(name).ok_or_else(|| ConfigError::Invalid(format!("unknown preset {name:?}")))?;
            let mut merged = toml::Table::try_from(&base).map_err(|e| ConfigError::Parse(e.to_string()))?;
            if let Some(toml::Value::Table(given)) = doc.remove("model") {
                merged.extend(given);
            }
            doc.insert("model".into(), toml::Value::Table(merged));
        }
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.effective_hyper()?.validate()?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.protocol.k == 0 || self.protocol.seeds.is_empty() {
            return Err(ConfigError::Invalid("protocol needs k >= 1 and at least one seed".into()));
        }
        let seeds = self.protocol.seeds.iter().chain([&self.train.seed, &self.train.validation_seed]);
        if let Some(s) = seeds.into_iter().find(|s| **s > i64::MAX as u64) {
            return Err(ConfigError::Invalid(format!("seed {s} exceeds the TOML integer range")));
        }
        Ok(())
    }

    /// Hyper-parameters after the ablation overrides and feature toggles.
    pub fn effective_hyper(&self) -> Result<HyperParams, ConfigError> {
        let mut hp = apply_ablation(&self.model, self.ablation)?;
        if !self.features.use_context && hp.positional_mode == PositionalMode::Context {
            hp.positional_mode = PositionalMode::None;
        }
        Ok(hp)
    }

    /// Checks that the input files exist.
    pub fn check_inputs(&self) -> Result<(), ConfigError> {
        if !self.paths.interactions.is_file() {
            return Err(ConfigError::MissingPath { what: "interactions file", path: self.paths.interactions.clone() });
        }
        if self.features.use_attributes {
            match &self.paths.attributes {
                None => {
                    return Err(ConfigError::Invalid(
                        "features.use_attributes is true but paths.attributes is not set; set it or disable attributes".into(),
                    ))
                }
                Some(p) if !p.is_file() => return Err(ConfigError::MissingPath { what: "attributes file", path: p.clone() }),
                Some(_) => {}
            }
        }
        Ok(())
    }
}
