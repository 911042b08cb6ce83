use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureLayout, HyperParams, ModelError, PositionalMode, ScoringMode};
use crate::data::derive_rng;
use crate::numerics::Matrix;

/// Data-dependent input widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Items are `1..=num_items`.
    pub num_items: usize,
    /// Attribute width `j` consumed by the model (0 when attributes are off).
    pub attr_dim: usize,
    /// Context width `l` consumed by the model (0 when context is off).
    pub ctx_dim: usize,
}

impl ModelDims {
    /// Context width actually fed to the embedding, which is zero unless the
    /// positional mode is `Context`.
    pub fn effective_ctx(&self, hp: &HyperParams) -> usize {
        if hp.positional_mode == PositionalMode::Context {
            self.ctx_dim
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Weight matrix: Xavier-initialised and L2-regularised.
    Weight,
    Bias,
    NormGain,
    NormBias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionIds {
    pub query: usize,
    pub key: usize,
    pub value: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIds {
    pub attention: AttentionIds,
    pub norm1_gain: usize,
    pub norm1_bias: usize,
    pub ffn_w1: usize,
    pub ffn_b1: usize,
    pub ffn_w2: usize,
    pub ffn_b2: usize,
    pub norm2_gain: usize,
    pub norm2_bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingIds {
    /// `z = x Wφ + bφ`, `q = [a,c] Wψ + bψ`, `e = [z,q] Wω + bω`
    Default { item: usize, item_bias: usize, feature: usize, feature_bias: usize, mix: usize, mix_bias: usize },
    /// `e = x W_item + [a,c] W_feat + b`
    ConcatAll { item: usize, feature: usize, bias: usize },
    /// `z = x W_item + a W_attr + bφ`, `q = c Wψ + bψ`, `e = [z,q] Wω + bω`
    ConcatItem { item: usize, attribute: usize, item_bias: usize, context: usize, context_bias: usize, mix: usize, mix_bias: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorerIds {
    pub attention: AttentionIds,
    pub out_w: usize,
    pub out_b: usize,
}

/// Ordered parameter inventory for a `(HyperParams, ModelDims)` pair with
/// typed indices into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub embedding: EmbeddingIds,
    pub blocks: Vec<BlockIds>,
    pub scorer: Option<ScorerIds>,
    pub output_blocks: Vec<BlockIds>,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, kind: ParamKind) -> usize {
        self.specs.push(ParamSpec { name, rows, cols, kind });
        self.specs.len() - 1
    }

    fn attention(&mut self, prefix: &str, d: usize) -> AttentionIds {
        AttentionIds {
            query: self.add(format!("{prefix}.query"), d, d, ParamKind::Weight),
            key: self.add(format!("{prefix}.key"), d, d, ParamKind::Weight),
            value: self.add(format!("{prefix}.value"), d, d, ParamKind::Weight),
        }
    }

    fn block(&mut self, prefix: &str, d: usize) -> BlockIds {
        let attention = self.attention(&format!("{prefix}.attn"), d);
        BlockIds {
            attention,
            norm1_gain: self.add(format!("{prefix}.norm1.gain"), 1, d, ParamKind::NormGain),
            norm1_bias: self.add(format!("{prefix}.norm1.bias"), 1, d, ParamKind::NormBias),
            ffn_w1: self.add(format!("{prefix}.ffn.w1"), d, d, ParamKind::Weight),
            ffn_b1: self.add(format!("{prefix}.ffn.b1"), 1, d, ParamKind::Bias),
            ffn_w2: self.add(format!("{prefix}.ffn.w2"), d, d, ParamKind::Weight),
            ffn_b2: self.add(format!("{prefix}.ffn.b2"), 1, d, ParamKind::Bias),
            norm2_gain: self.add(format!("{prefix}.norm2.gain"), 1, d, ParamKind::NormGain),
            norm2_bias: self.add(format!("{prefix}.norm2.bias"), 1, d, ParamKind::NormBias),
        }
    }
}

impl Layout {
    pub fn new(hp: &HyperParams, dims: &ModelDims) -> Result<Self, ModelError> {
        hp.validate()?;
        let (d, g) = (hp.embed_dim, hp.feature_dim);
        let (items, attrs, ctx) = (dims.num_items, dims.attr_dim, dims.effective_ctx(hp));
        let mut b = Builder { specs: Vec::new() };
        use ParamKind::*;
        let embedding = match hp.feature_layout {
            FeatureLayout::Default => EmbeddingIds::Default {
                item: b.add("embed.item".into(), items, d, Weight),
                item_bias: b.add("embed.item_bias".into(), 1, d, Bias),
                feature: b.add("embed.feature".into(), attrs + ctx, g, Weight),
                feature_bias: b.add("embed.feature_bias".into(), 1, g, Bias),
                mix: b.add("embed.mix".into(), d + g, d, Weight),
                mix_bias: b.add("embed.mix_bias".into(), 1, d, Bias),
            },
            FeatureLayout::ConcatAll => EmbeddingIds::ConcatAll {
                item: b.add("embed.item".into(), items, d, Weight),
                feature: b.add("embed.feature".into(), attrs + ctx, d, Weight),
                bias: b.add("embed.bias".into(), 1, d, Bias),
            },
            FeatureLayout::ConcatItem => EmbeddingIds::ConcatItem {
                item: b.add("embed.item".into(), items, d, Weight),
                attribute: b.add("embed.attribute".into(), attrs, d, Weight),
                item_bias: b.add("embed.item_bias".into(), 1, d, Bias),
                context: b.add("embed.context".into(), ctx, g, Weight),
                context_bias: b.add("embed.context_bias".into(), 1, g, Bias),
                mix: b.add("embed.mix".into(), d + g, d, Weight),
                mix_bias: b.add("embed.mix_bias".into(), 1, d, Bias),
            },
        };
        let blocks = (0..hp.blocks).map(|i| b.block(&format!("block{i}"), d)).collect();
        let scorer = match hp.scoring_mode {
            ScoringMode::CrossAttention => Some(ScorerIds {
                attention: b.attention("cross.attn", d),
                out_w: b.add("output.weight".into(), d, 1, Weight),
                out_b: b.add("output.bias".into(), 1, 1, Bias),
            }),
            ScoringMode::DotProduct => None,
        };
        let output_blocks = (0..hp.output_blocks).map(|i| b.block(&format!("output_block{i}"), d)).collect();
        Ok(Self { specs: b.specs, embedding, blocks, scorer, output_blocks })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// Every learnable tensor of the network, in [`Layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    tensors: Vec<Matrix>,
}

impl ModelParams {
    /// Zero tensors shaped by `layout`.
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            names: layout.specs.iter().map(|s| s.name.clone()).collect(),
            kinds: layout.specs.iter().map(|s| s.kind).collect(),
            tensors: layout.specs.iter().map(|s| Matrix::zeros(s.rows, s.cols)).collect(),
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero,
    /// layer-norm gains one. Deterministic in `seed`.
    pub fn init(layout: &Layout, seed: u64) -> Self {
        let mut rng = derive_rng(seed, 0x1417, 0);
        let mut params = Self::zeros(layout);
        for (spec, t) in layout.specs.iter().zip(params.tensors.iter_mut()) {
            match spec.kind {
                ParamKind::Weight => {
                    let fan = (spec.rows + spec.cols) as f64;
                    let bound = (6.0 / fan).sqrt();
                    for v in t.data_mut() {
                        *v = rng.gen_range(-bound..=bound);
                    }
                }
                ParamKind::NormGain => t.data_mut().fill(1.0),
                ParamKind::Bias | ParamKind::NormBias => {}
            }
        }
        params
    }

    /// Replaces the tensors, keeping names and kinds. Shapes must match.
    pub fn with_tensors(&self, tensors: Vec<Matrix>) -> Result<Self, ModelError> {
        if tensors.len() != self.tensors.len() {
            return Err(ModelError::Incompatible(format!("expected {} tensors, got {}", self.tensors.len(), tensors.len())));
        }
        for (i, (a, b)) in self.tensors.iter().zip(&tensors).enumerate() {
            if a.shape() != b.shape() {
                return Err(ModelError::Incompatible(format!("tensor {} has shape {:?}, expected {:?}", self.names[i], b.shape(), a.shape())));
            }
        }
        Ok(Self { names: self.names.clone(), kinds: self.kinds.clone(), tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn tensor(&self, id: usize) -> &Matrix {
        &self.tensors[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ParamKind] {
        &self.kinds
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims { num_items: 30, attr_dim: 4, ctx_dim: 6 }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let hp = HyperParams { embed_dim: 12, feature_dim: 8, heads: 3, blocks: 2, ..HyperParams::default() };
        let layout = Layout::new(&hp, &dims()).unwrap();
        let a = ModelParams::init(&layout, 42);
        let b = ModelParams::init(&layout, 42);
        assert!(a.tensors().iter().zip(b.tensors()).all(|(x, y)| x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())));
        assert_ne!(a, ModelParams::init(&layout, 43));
        for (t, k) in a.tensors().iter().zip(a.kinds()) {
            match k {
                ParamKind::Bias | ParamKind::NormBias => assert!(t.data().iter().all(|v| *v == 0.0)),
                ParamKind::NormGain => assert!(t.data().iter().all(|v| *v == 1.0)),
                ParamKind::Weight => {}
            }
        }
    }

    #[test]
    fn weight_means_are_centred() {
        // uniform(-b, b): sd of the sample mean is b / sqrt(3 N)
        let hp = HyperParams { embed_dim: 30, feature_dim: 40, heads: 3, blocks: 1, ..HyperParams::default() };
        let layout = Layout::new(&hp, &ModelDims { num_items: 500, attr_dim: 10, ctx_dim: 6 }).unwrap();
        let p = ModelParams::init(&layout, 7);
        for (spec, t) in layout.specs.iter().zip(p.tensors()) {
            if spec.kind != ParamKind::Weight || t.is_empty() {
                continue;
            }
            let bound = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
            assert!(t.data().iter().all(|v| v.abs() <= bound));
            let mean = t.sum() / t.len() as f64;
            let sd = bound / (3.0 * t.len() as f64).sqrt();
            assert!(mean.abs() < 3.0 * sd, "{}: mean {mean} sd {sd}", spec.name);
        }
    }

    #[test]
    fn shapes_follow_layouts() {
        let hp = HyperParams { embed_dim: 6, feature_dim: 10, heads: 2, blocks: 1, ..HyperParams::default() };
        let p = ModelParams::init(&Layout::new(&hp, &dims()).unwrap(), 0);
        assert_eq!(p.get("embed.item").unwrap().shape(), (30, 6));
        assert_eq!(p.get("embed.feature").unwrap().shape(), (10, 10));
        assert_eq!(p.get("embed.mix").unwrap().shape(), (16, 6));
        assert_eq!(p.get("output.weight").unwrap().shape(), (6, 1));
        assert_eq!(p.get("output.bias").unwrap().shape(), (1, 1));

        let hp_pe = HyperParams { positional_mode: PositionalMode::PositionalEncoding, feature_layout: FeatureLayout::ConcatAll, ..hp.clone() };
        let p = ModelParams::init(&Layout::new(&hp_pe, &dims()).unwrap(), 0);
        assert_eq!(p.get("embed.feature").unwrap().shape(), (4, 6));
        assert!(p.get("embed.mix").is_none());

        let hp_dot = HyperParams { scoring_mode: ScoringMode::DotProduct, ..hp };
        let p = ModelParams::init(&Layout::new(&hp_dot, &dims()).unwrap(), 0);
        assert!(p.get("cross.attn.query").is_none() && p.get("output.weight").is_none());
    }
}
