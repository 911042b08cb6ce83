//! Straight-line forward pass on nested vectors, written against the model
//! definition rather than the crate's tape.

use carca_core::model::{FeatureLayout, Model, PositionalMode, ResidualMode, ScoringMode, SequenceInput};

type Mat = Vec<Vec<f64>>;

fn load(model: &Model, name: &str) -> Mat {
    let m = model.params.get(name).unwrap_or_else(|| panic!("no parameter {name}"));
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn vec_of(model: &Model, name: &str) -> Vec<f64> {
    load(model, name).remove(0)
}

fn vec_mat(x: &[f64], w: &Mat) -> Vec<f64> {
    let cols = w.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; cols];
    for (i, xi) in x.iter().enumerate() {
        for c in 0..cols {
            out[c] += xi * w[i][c];
        }
    }
    out
}

fn affine(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    vec_mat(x, w).iter().zip(b).map(|(a, b)| a + b).collect()
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = (var + 1e-8).sqrt();
    x.iter().zip(gain).zip(bias).map(|((v, g), b)| (v - mean) / sd * g + b).collect()
}

fn combine(mode: ResidualMode, x: &[f64], f: &[f64]) -> Vec<f64> {
    match mode {
        ResidualMode::Multiplicative => x.iter().zip(f).map(|(a, b)| a * b).collect(),
        ResidualMode::Additive => x.iter().zip(f).map(|(a, b)| a + b).collect(),
    }
}

/// Multi-head attention with its own projections; a query row whose keys
/// are all masked attends to nothing and yields zeros.
fn mha(model: &Model, prefix: &str, queries: &Mat, keys: &Mat, key_mask: &[bool]) -> Mat {
    let heads = model.hp.heads;
    let d = model.hp.embed_dim;
    let dh = d / heads;
    let (wq, wk, wv) = (load(model, &format!("{prefix}.query")), load(model, &format!("{prefix}.key")), load(model, &format!("{prefix}.value")));
    let q: Mat = queries.iter().map(|x| vec_mat(x, &wq)).collect();
    let k: Mat = keys.iter().map(|x| vec_mat(x, &wk)).collect();
    let v: Mat = keys.iter().map(|x| vec_mat(x, &wv)).collect();
    let mut out = vec![vec![0.0; d]; queries.len()];
    for (i, qi) in q.iter().enumerate() {
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let live: Vec<usize> = (0..keys.len()).filter(|j| key_mask[*j]).collect();
            if live.is_empty() {
                continue;
            }
            let logits: Vec<f64> = live
                .iter()
                .map(|&j| cols.clone().map(|c| qi[c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = weights.iter().sum();
            for (w, &j) in weights.iter().zip(&live) {
                for c in cols.clone() {
                    out[i][c] += w / total * v[j][c];
                }
            }
        }
    }
    out
}

fn block(model: &Model, prefix: &str, x: &Mat, mask: &[bool]) -> Mat {
    let mode = model.hp.residual_mode;
    let s = mha(model, &format!("{prefix}.attn"), x, x, mask);
    let (g1, b1) = (vec_of(model, &format!("{prefix}.norm1.gain")), vec_of(model, &format!("{prefix}.norm1.bias")));
    let (g2, b2) = (vec_of(model, &format!("{prefix}.norm2.gain")), vec_of(model, &format!("{prefix}.norm2.bias")));
    let (w1, c1) = (load(model, &format!("{prefix}.ffn.w1")), vec_of(model, &format!("{prefix}.ffn.b1")));
    let (w2, c2) = (load(model, &format!("{prefix}.ffn.w2")), vec_of(model, &format!("{prefix}.ffn.b2")));
    let slope = model.hp.leaky_slope;
    x.iter()
        .zip(&s)
        .zip(mask)
        .map(|((xr, sr), &live)| {
            if !live {
                return vec![0.0; xr.len()];
            }
            let h = layer_norm(&combine(mode, xr, sr), &g1, &b1);
            let hidden: Vec<f64> = affine(&h, &w1, &c1).into_iter().map(|v| if v > 0.0 { v } else { slope * v }).collect();
            let f = affine(&hidden, &w2, &c2);
            layer_norm(&combine(mode, &h, &f), &g2, &b2)
        })
        .collect()
}

fn embed(model: &Model, input: &SequenceInput) -> Mat {
    assert_eq!(model.hp.feature_layout, FeatureLayout::Default, "oracle covers the default layout");
    let (item, item_b) = (load(model, "embed.item"), vec_of(model, "embed.item_bias"));
    let (feat, feat_b) = (load(model, "embed.feature"), vec_of(model, "embed.feature_bias"));
    let (mix, mix_b) = (load(model, "embed.mix"), vec_of(model, "embed.mix_bias"));
    let d = model.hp.embed_dim;
    (0..input.len())
        .map(|r| {
            let id = input.items[r];
            if id == 0 {
                return vec![0.0; d];
            }
            let z: Vec<f64> = item[id - 1].iter().zip(&item_b).map(|(a, b)| a + b).collect();
            let features: Vec<f64> = input.attrs.row(r).iter().chain(input.ctx.row(r)).cloned().collect();
            let q = affine(&features, &feat, &feat_b);
            let zq: Vec<f64> = z.into_iter().chain(q).collect();
            affine(&zq, &mix, &mix_b)
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scores of `targets` given `profile`, dropout off, no output blocks.
pub fn forward(model: &Model, profile: &SequenceInput, targets: &SequenceInput) -> Vec<f64> {
    assert_eq!(model.hp.positional_mode, PositionalMode::Context);
    assert_eq!(model.hp.output_blocks, 0);
    let pmask = profile.mask();
    let mut f = embed(model, profile);
    for b in 0..model.hp.blocks {
        f = block(model, &format!("block{b}"), &f, &pmask);
    }
    let e = embed(model, targets);
    match model.hp.scoring_mode {
        ScoringMode::CrossAttention => {
            let s = mha(model, "cross.attn", &e, &f, &pmask);
            let w = load(model, "output.weight");
            let b = vec_of(model, "output.bias")[0];
            e.iter()
                .zip(&s)
                .map(|(er, sr)| {
                    let s = if model.hp.ca_residual { combine(model.hp.residual_mode, er, sr) } else { sr.clone() };
                    sigmoid(s.iter().zip(&w).map(|(x, wr)| x * wr[0]).sum::<f64>() + b)
                })
                .collect()
        }
        ScoringMode::DotProduct => {
            let last = pmask.iter().rposition(|m| *m);
            e.iter()
                .map(|er| match last {
                    Some(r) => sigmoid(er.iter().zip(&f[r]).map(|(a, b)| a * b).sum()),
                    None => 0.5,
                })
                .collect()
        }
    }
}
