use rand::Rng;

use super::{
    AttentionIds, BlockIds, EmbeddingIds, HyperParams, Layout, ModelDims, ModelError, ModelParams, PositionalMode,
    ResidualMode, ScoringMode,
};
use crate::data::{ItemCatalog, SeededRng, PAD};
use crate::numerics::{Matrix, Tape, Var, LAYER_NORM_EPS};

/// Items of a profile or candidate list with their attribute and context
/// rows. Padding items ([`PAD`]) are masked everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    pub items: Vec<usize>,
    /// `len × attr_dim`
    pub attrs: Matrix,
    /// `len × ctx_dim` (zero columns when the model ignores context)
    pub ctx: Matrix,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.items.iter().map(|&i| i != PAD).collect()
    }

    /// Keeps the rows in `rows`, in that order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let idx: Vec<Option<usize>> = rows.iter().map(|&r| Some(r)).collect();
        Self {
            items: rows.iter().map(|&r| self.items[r]).collect(),
            attrs: self.attrs.gather_rows(&idx).expect("row in range"),
            ctx: self.ctx.gather_rows(&idx).expect("row in range"),
        }
    }
}

/// Fixed sinusoidal position encodings, `n × d`.
pub fn sinusoidal_encoding(n: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    for pos in 0..n {
        for c in 0..d {
            let pair = (c / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            m.set(pos, c, if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

fn row_mask(mask: &[bool], cols: usize) -> Matrix {
    let mut m = Matrix::zeros(mask.len(), cols);
    for (r, &live) in mask.iter().enumerate() {
        if live {
            m.row_mut(r).fill(1.0);
        }
    }
    m
}

/// One forward pass of the network recorded on a gradient tape.
///
/// Parameters are registered as tape leaves under their layout index, so
/// [`Network::backward`] yields one gradient per tensor. Dropout is active
/// only when a generator is supplied and the rate is positive.
pub struct Network<'p> {
    hp: &'p HyperParams,
    dims: ModelDims,
    layout: &'p Layout,
    tape: Tape<'p>,
    vars: Vec<Var>,
    dropout_rng: Option<SeededRng>,
}

impl<'p> Network<'p> {
    pub fn new(hp: &'p HyperParams, dims: ModelDims, layout: &'p Layout, params: &'p [Matrix], dropout_rng: Option<SeededRng>) -> Result<Self, ModelError> {
        if params.len() != layout.len() {
            return Err(ModelError::Incompatible(format!("expected {} tensors, got {}", layout.len(), params.len())));
        }
        let mut tape = Tape::new();
        let mut vars = Vec::with_capacity(params.len());
        for (i, (spec, p)) in layout.specs.iter().zip(params).enumerate() {
            if p.shape() != (spec.rows, spec.cols) {
                return Err(ModelError::Incompatible(format!("{} has shape {:?}, expected {:?}", spec.name, p.shape(), (spec.rows, spec.cols))));
            }
            vars.push(tape.param(i, p));
        }
        Ok(Self { hp, dims, layout, tape, vars, dropout_rng })
    }

    pub fn tape(&self) -> &Tape<'p> {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape<'p> {
        &mut self.tape
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.tape.value(v)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.tape.constant(m)
    }

    /// Gradients of `loss` for every tensor, in layout order.
    pub fn backward(&self, loss: Var) -> Result<Vec<Matrix>, ModelError> {
        let grads = self.tape.backward(loss)?;
        let mut map = grads.into_map();
        Ok((0..self.vars.len()).map(|i| map.remove(&i).expect("every parameter is a registered leaf")).collect())
    }

    fn p(&self, id: usize) -> Var {
        self.vars[id]
    }

    fn dropout(&mut self, x: Var) -> Result<Var, ModelError> {
        let rate = self.hp.dropout;
        let Some(rng) = self.dropout_rng.as_mut() else { return Ok(x) };
        if rate <= 0.0 {
            return Ok(x);
        }
        let (r, c) = self.tape.value(x).shape();
        let keep = 1.0 / (1.0 - rate);
        let data = (0..r * c).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        let m = self.tape.constant(Matrix::from_vec(r, c, data)?);
        Ok(self.tape.mul(x, m)?)
    }

    fn mask_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var, ModelError> {
        if mask.iter().all(|m| *m) {
            return Ok(x);
        }
        let cols = self.tape.value(x).cols();
        let m = self.tape.constant(row_mask(mask, cols));
        Ok(self.tape.mul(x, m)?)
    }

    fn combine(&mut self, x: Var, sub: Var) -> Result<Var, ModelError> {
        Ok(match self.hp.residual_mode {
            ResidualMode::Multiplicative => self.tape.mul(x, sub)?,
            ResidualMode::Additive => self.tape.add(x, sub)?,
        })
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Result<Var, ModelError> {
        let h = self.tape.matmul(x, self.p(w))?;
        Ok(self.tape.add_row(h, self.p(b))?)
    }

    /// Item embeddings `len × d`; padded rows are zero.
    pub fn embed(&mut self, input: &SequenceInput) -> Result<Var, ModelError> {
        let n = input.len();
        let ctx_width = self.dims.effective_ctx(self.hp);
        if input.attrs.shape() != (n, self.dims.attr_dim) || input.ctx.shape() != (n, ctx_width) {
            return Err(ModelError::Shape(format!(
                "input of {n} items needs attrs {n}x{} and ctx {n}x{ctx_width}, got {:?} and {:?}",
                self.dims.attr_dim,
                input.attrs.shape(),
                input.ctx.shape()
            )));
        }
        let lookup = input
            .items
            .iter()
            .map(|&i| match i {
                PAD => Ok(None),
                i if i <= self.dims.num_items => Ok(Some(i - 1)),
                i => Err(ModelError::UnknownItem(i)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let attrs = self.tape.constant(input.attrs.clone());
        let ctx = self.tape.constant(input.ctx.clone());

        let e = match self.layout.embedding.clone() {
            EmbeddingIds::Default { item, item_bias, feature, feature_bias, mix, mix_bias } => {
                let z = self.tape.gather_rows(self.p(item), lookup)?;
                let z = self.tape.add_row(z, self.p(item_bias))?;
                let features = self.tape.concat_cols(&[attrs, ctx])?;
                let q = self.linear(features, feature, feature_bias)?;
                let zq = self.tape.concat_cols(&[z, q])?;
                self.linear(zq, mix, mix_bias)?
            }
            EmbeddingIds::ConcatAll { item, feature, bias } => {
                let z = self.tape.gather_rows(self.p(item), lookup)?;
                let features = self.tape.concat_cols(&[attrs, ctx])?;
                let f = self.tape.matmul(features, self.p(feature))?;
                let e = self.tape.add(z, f)?;
                self.tape.add_row(e, self.p(bias))?
            }
            EmbeddingIds::ConcatItem { item, attribute, item_bias, context, context_bias, mix, mix_bias } => {
                let z = self.tape.gather_rows(self.p(item), lookup)?;
                let za = self.tape.matmul(attrs, self.p(attribute))?;
                let z = self.tape.add(z, za)?;
                let z = self.tape.add_row(z, self.p(item_bias))?;
                let q = self.linear(ctx, context, context_bias)?;
                let zq = self.tape.concat_cols(&[z, q])?;
                self.linear(zq, mix, mix_bias)?
            }
        };
        self.mask_rows(e, &input.mask())
    }

    /// Profile embeddings with optional position encodings and embedding
    /// dropout.
    pub fn embed_profile(&mut self, profile: &SequenceInput) -> Result<Var, ModelError> {
        let mut e = self.embed(profile)?;
        if self.hp.positional_mode == PositionalMode::PositionalEncoding {
            let pe = self.tape.constant(sinusoidal_encoding(profile.len(), self.hp.embed_dim));
            e = self.tape.add(e, pe)?;
        }
        let e = self.dropout(e)?;
        self.mask_rows(e, &profile.mask())
    }

    /// Scaled dot-product attention per head over column slices of the
    /// projected `q`, `k`, `v`, heads concatenated column-wise. Keys with a
    /// false `key_mask` flag get zero weight.
    pub fn attention_heads(&mut self, q: Var, k: Var, v: Var, heads: usize, key_mask: &[bool]) -> Result<Var, ModelError> {
        let width = self.tape.value(q).cols();
        if heads == 0 || width % heads != 0 {
            return Err(ModelError::Config(format!("{heads} heads do not divide projection width {width}")));
        }
        let head_dim = width / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.slice_cols(q, h * head_dim, head_dim)?;
            let kh = self.tape.slice_cols(k, h * head_dim, head_dim)?;
            let vh = self.tape.slice_cols(v, h * head_dim, head_dim)?;
            let logits = self.tape.matmul_transposed(qh, kh)?;
            let logits = self.tape.scale(logits, scale);
            let weights = self.tape.masked_softmax_rows(logits, Some(key_mask))?;
            outs.push(self.tape.matmul(weights, vh)?);
        }
        if outs.len() == 1 {
            return Ok(outs[0]);
        }
        Ok(self.tape.concat_cols(&outs)?)
    }

    fn multi_head(&mut self, queries: Var, keys: Var, ids: AttentionIds, key_mask: &[bool]) -> Result<Var, ModelError> {
        let q = self.tape.matmul(queries, self.p(ids.query))?;
        let k = self.tape.matmul(keys, self.p(ids.key))?;
        let v = self.tape.matmul(keys, self.p(ids.value))?;
        self.attention_heads(q, k, v, self.hp.heads, key_mask)
    }

    /// Self-attention then point-wise feed-forward, each followed by the
    /// residual combine and layer norm. Padded rows are re-zeroed.
    pub fn block(&mut self, x: Var, ids: BlockIds, mask: &[bool]) -> Result<Var, ModelError> {
        let s = self.multi_head(x, x, ids.attention, mask)?;
        let s = self.dropout(s)?;
        let h = self.combine(x, s)?;
        let h = self.tape.layer_norm_rows(h, self.p(ids.norm1_gain), self.p(ids.norm1_bias), LAYER_NORM_EPS)?;

        let f = self.linear(h, ids.ffn_w1, ids.ffn_b1)?;
        let f = self.tape.leaky_relu(f, self.hp.leaky_slope);
        let f = self.linear(f, ids.ffn_w2, ids.ffn_b2)?;
        let f = self.dropout(f)?;
        let o = self.combine(h, f)?;
        let o = self.tape.layer_norm_rows(o, self.p(ids.norm2_gain), self.p(ids.norm2_bias), LAYER_NORM_EPS)?;
        self.mask_rows(o, mask)
    }

    pub fn encode_profile(&mut self, e: Var, mask: &[bool]) -> Result<Var, ModelError> {
        let mut f = e;
        for ids in self.layout.blocks.clone() {
            f = self.block(f, ids, mask)?;
        }
        Ok(f)
    }

    /// Scores `len(targets) × 1` in `(0, 1)` for candidate embeddings
    /// `e_targets` against the encoded profile `f_profile`.
    pub fn score(&mut self, e_targets: Var, target_mask: &[bool], f_profile: Var, profile_mask: &[bool]) -> Result<Var, ModelError> {
        match self.hp.scoring_mode {
            ScoringMode::CrossAttention => {
                let ids = self.layout.scorer.expect("cross-attention layout has a scorer");
                let s = self.multi_head(e_targets, f_profile, ids.attention, profile_mask)?;
                let s = self.dropout(s)?;
                let mut s = if self.hp.ca_residual { self.combine(e_targets, s)? } else { s };
                for ids in self.layout.output_blocks.clone() {
                    s = self.block(s, ids, target_mask)?;
                }
                let logits = self.linear(s, ids.out_w, ids.out_b)?;
                Ok(self.tape.sigmoid(logits))
            }
            ScoringMode::DotProduct => {
                let last = profile_mask.iter().rposition(|m| *m);
                let mut e = e_targets;
                for ids in self.layout.output_blocks.clone() {
                    e = self.block(e, ids, target_mask)?;
                }
                let logits = match last {
                    Some(r) => {
                        let row = self.tape.gather_rows(f_profile, vec![Some(r)])?;
                        self.tape.matmul_transposed(e, row)?
                    }
                    None => self.tape.constant(Matrix::zeros(target_mask.len(), 1)),
                };
                Ok(self.tape.sigmoid(logits))
            }
        }
    }

    /// Full pass: profile embedding, encoder, candidate embedding, scores.
    pub fn forward(&mut self, profile: &SequenceInput, targets: &SequenceInput) -> Result<Var, ModelError> {
        let profile_mask = profile.mask();
        let e_p = self.embed_profile(profile)?;
        let f_p = self.encode_profile(e_p, &profile_mask)?;
        let e_o = self.embed(targets)?;
        self.score(e_o, &targets.mask(), f_p, &profile_mask)
    }
}

/// Hyper-parameters, dimensions, layout and parameters of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub hp: HyperParams,
    pub dims: ModelDims,
    pub layout: Layout,
    pub params: ModelParams,
}

impl Model {
    pub fn init(hp: HyperParams, dims: ModelDims, seed: u64) -> Result<Self, ModelError> {
        let layout = Layout::new(&hp, &dims)?;
        let params = ModelParams::init(&layout, seed);
        Ok(Self { hp, dims, layout, params })
    }

    pub fn from_params(hp: HyperParams, dims: ModelDims, params: ModelParams) -> Result<Self, ModelError> {
        let layout = Layout::new(&hp, &dims)?;
        let expected = ModelParams::zeros(&layout);
        if expected.names() != params.names() {
            return Err(ModelError::Incompatible("parameter names do not match the hyper-parameters".into()));
        }
        let params = expected.with_tensors(params.tensors().to_vec())?;
        Ok(Self { hp, dims, layout, params })
    }

    /// Inference-mode network (dropout off) over `tensors`.
    pub fn network<'p>(&'p self, tensors: &'p [Matrix], dropout_rng: Option<SeededRng>) -> Result<Network<'p>, ModelError> {
        Network::new(&self.hp, self.dims, &self.layout, tensors, dropout_rng)
    }

    /// Builds model input for `items` with context rows `ctx`
    /// (`len × CONTEXT_DIM`) and attributes from `catalog`, keeping only the
    /// widths this model consumes.
    pub fn input(&self, items: &[usize], ctx: &Matrix, catalog: &ItemCatalog) -> Result<SequenceInput, ModelError> {
        let attrs = if self.dims.attr_dim == 0 { Matrix::zeros(items.len(), 0) } else { catalog.attribute_rows(items)? };
        if attrs.cols() != self.dims.attr_dim {
            return Err(ModelError::Shape(format!("catalog has {} attribute columns, model expects {}", attrs.cols(), self.dims.attr_dim)));
        }
        let width = self.dims.effective_ctx(&self.hp);
        if width > 0 && (ctx.rows() != items.len() || ctx.cols() < width) {
            return Err(ModelError::Shape(format!("context rows {:?} do not cover {} items", ctx.shape(), items.len())));
        }
        let ctx = if width == 0 { Matrix::zeros(items.len(), 0) } else { ctx.slice_cols(0, width)? };
        Ok(SequenceInput { items: items.to_vec(), attrs, ctx })
    }

    /// Candidate scores with dropout disabled.
    pub fn score(&self, profile: &SequenceInput, targets: &SequenceInput) -> Result<Vec<f64>, ModelError> {
        let mut net = self.network(self.params.tensors(), None)?;
        let out = net.forward(profile, targets)?;
        Ok(net.value(out).data().to_vec())
    }
}

/// Embeddings of `input` (inference mode).
pub fn embed_items(model: &Model, input: &SequenceInput) -> Result<Matrix, ModelError> {
    let mut net = model.network(model.params.tensors(), None)?;
    let e = net.embed(input)?;
    Ok(net.value(e).clone())
}

/// Multi-head scaled dot-product attention over already projected
/// `q`, `k`, `v`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, heads: usize, key_mask: &[bool]) -> Result<Matrix, ModelError> {
    let hp = HyperParams::default();
    let layout = Layout { specs: Vec::new(), embedding: EmbeddingIds::ConcatAll { item: 0, feature: 0, bias: 0 }, blocks: Vec::new(), scorer: None, output_blocks: Vec::new() };
    let dims = ModelDims { num_items: 0, attr_dim: 0, ctx_dim: 0 };
    let mut net = Network::new(&hp, dims, &layout, &[], None)?;
    let (q, k, v) = (net.constant(q.clone()), net.constant(k.clone()), net.constant(v.clone()));
    let out = net.attention_heads(q, k, v, heads, key_mask)?;
    Ok(net.value(out).clone())
}

/// Applies encoder block `block` to `f_in` (inference mode).
pub fn self_attention_block(model: &Model, block: usize, f_in: &Matrix, mask: &[bool]) -> Result<Matrix, ModelError> {
    let ids = *model.layout.blocks.get(block).ok_or_else(|| ModelError::Config(format!("no encoder block {block}")))?;
    let mut net = model.network(model.params.tensors(), None)?;
    let x = net.constant(f_in.clone());
    let out = net.block(x, ids, mask)?;
    Ok(net.value(out).clone())
}

/// Runs all encoder blocks over profile embeddings `e_profile`.
pub fn encode_profile(model: &Model, e_profile: &Matrix, mask: &[bool]) -> Result<Matrix, ModelError> {
    let mut net = model.network(model.params.tensors(), None)?;
    let x = net.constant(e_profile.clone());
    let out = net.encode_profile(x, mask)?;
    Ok(net.value(out).clone())
}

/// Scores candidate embeddings against encoded profile features.
pub fn score_targets(model: &Model, e_targets: &Matrix, target_mask: &[bool], f_profile: &Matrix, profile_mask: &[bool]) -> Result<Vec<f64>, ModelError> {
    let mut net = model.network(model.params.tensors(), None)?;
    let e = net.constant(e_targets.clone());
    let f = net.constant(f_profile.clone());
    let out = net.score(e, target_mask, f, profile_mask)?;
    Ok(net.value(out).data().to_vec())
}
