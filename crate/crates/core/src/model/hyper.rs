use serde::{Deserialize, Serialize};

use super::ModelError;

/// How a sublayer output is merged back into its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// `x ⊙ dropout(f(x))`
    Multiplicative,
    /// `x + dropout(f(x))`
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Multi-head cross-attention from candidates onto the encoded profile,
    /// followed by a sigmoid output layer.
    CrossAttention,
    /// Sigmoid of the dot product between the most recent encoded profile
    /// row and each candidate embedding.
    DotProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalMode {
    /// Order is carried by the interaction context features.
    Context,
    /// Context features are dropped; fixed sinusoidal encodings are added to
    /// the profile embeddings.
    PositionalEncoding,
    /// Neither context nor positions.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayout {
    /// Item one-hot through one layer, `[attributes, context]` through a
    /// second, then a mixing layer over both.
    Default,
    /// One embedding layer over `[one-hot, attributes, context]`.
    ConcatAll,
    /// `[one-hot, attributes]` through one layer, context through the second.
    ConcatItem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSplit {
    /// Every unpadded window position is a training target.
    ListWise,
    /// Only the most recent position is a training target.
    SingleTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Item embedding width `d`.
    pub embed_dim: usize,
    /// Attribute/context embedding width `g`.
    pub feature_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub l2_weight: f64,
    pub learning_rate: f64,
    pub residual_mode: ResidualMode,
    pub scoring_mode: ScoringMode,
    pub positional_mode: PositionalMode,
    pub feature_layout: FeatureLayout,
    /// Residual connection around the cross-attention block.
    pub ca_residual: bool,
    pub leaky_slope: f64,
    /// Extra self-attention blocks stacked on the scored candidate vectors.
    pub output_blocks: usize,
    pub target_split: TargetSplit,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self::games()
    }
}

impl HyperParams {
    fn base() -> Self {
        Self {
            embed_dim: 90,
            feature_dim: 450,
            heads: 3,
            blocks: 3,
            max_len: 50,
            dropout: 0.5,
            l2_weight: 0.0,
            learning_rate: 1e-4,
            residual_mode: ResidualMode::Multiplicative,
            scoring_mode: ScoringMode::CrossAttention,
            positional_mode: PositionalMode::Context,
            feature_layout: FeatureLayout::Default,
            ca_residual: true,
            leaky_slope: 0.2,
            output_blocks: 0,
            target_split: TargetSplit::ListWise,
        }
    }

    pub fn men() -> Self {
        Self {
            learning_rate: 6e-6,
            max_len: 35,
            dropout: 0.3,
            l2_weight: 1e-4,
            embed_dim: 390,
            feature_dim: 1950,
            ca_residual: false,
            ..Self::base()
        }
    }

    pub fn fashion() -> Self {
        Self { learning_rate: 1e-5, ..Self::men() }
    }

    pub fn games() -> Self {
        Self::base()
    }

    pub fn beauty() -> Self {
        Self { max_len: 75, heads: 1, l2_weight: 1e-4, ..Self::base() }
    }

    /// Best-known configuration for a named dataset.
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "men" => Some(Self::men()),
            "fashion" => Some(Self::fashion()),
            "games" => Some(Self::games()),
            "beauty" => Some(Self::beauty()),
            _ => None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.embed_dim == 0 || self.feature_dim == 0 {
            return bad("embedding widths must be positive".into());
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} is not divisible by heads {}", self.embed_dim, self.heads));
        }
        if self.max_len < 2 {
            return bad(format!("max_len must be at least 2, got {}", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.l2_weight >= 0.0) {
            return bad(format!("l2_weight must be non-negative, got {}", self.l2_weight));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope must lie in (0, 1), got {}", self.leaky_slope));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn games_defaults() {
        let hp = HyperParams::default();
        assert_eq!((hp.learning_rate, hp.max_len, hp.blocks, hp.heads), (1e-4, 50, 3, 3));
        assert_eq!((hp.dropout, hp.embed_dim, hp.feature_dim, hp.l2_weight), (0.5, 90, 450, 0.0));
        assert!(hp.ca_residual);
        hp.validate().unwrap();
    }

    #[test]
    fn presets_validate() {
        for name in ["men", "fashion", "games", "beauty"] {
            HyperParams::preset(name).unwrap().validate().unwrap();
        }
        assert_eq!(HyperParams::men().learning_rate, 6e-6);
        assert_eq!(HyperParams::beauty().max_len, 75);
        assert!(HyperParams::preset("books").is_none());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let hp = HyperParams { embed_dim: 10, heads: 3, ..HyperParams::default() };
        assert!(matches!(hp.validate(), Err(ModelError::Config(_))));
        let hp = HyperParams { dropout: 1.0, ..HyperParams::default() };
        assert!(hp.validate().is_err());
    }
}
