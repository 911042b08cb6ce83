use super::TrainingError;
use crate::model::ModelParams;
use crate::numerics::Matrix;

/// ADAM moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Matrix> = params.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        Self { step: 0, m: zeros.clone(), v: zeros, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected ADAM update. Fails without touching anything if a
/// gradient is missing, misshapen or non-finite.
pub fn adam_step(params: &mut ModelParams, grads: &[Matrix], state: &mut OptimizerState, lr: f64) -> Result<(), TrainingError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainingError::Gradient(format!("expected {} gradients, got {}", params.len(), grads.len())));
    }
    for ((name, p), g) in params.names().iter().zip(params.tensors()).zip(grads) {
        if g.shape() != p.shape() {
            return Err(TrainingError::Gradient(format!("gradient for {name} is {:?}, parameter is {:?}", g.shape(), p.shape())));
        }
        if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(TrainingError::NonFiniteGradient { param: name.clone(), row: pos / g.cols().max(1), col: pos % g.cols().max(1) });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pj -= lr * (mj / c1) / ((vj / c2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HyperParams, Layout, ModelDims};

    fn params() -> ModelParams {
        let hp = HyperParams { embed_dim: 4, feature_dim: 4, heads: 2, blocks: 1, ..HyperParams::default() };
        let layout = Layout::new(&hp, &ModelDims { num_items: 5, attr_dim: 0, ctx_dim: 6 }).unwrap();
        ModelParams::init(&layout, 9)
    }

    fn filled_like(p: &ModelParams, v: f64) -> Vec<Matrix> {
        p.tensors().iter().map(|t| Matrix::filled(t.rows(), t.cols(), v)).collect()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = params();
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &filled_like(&before, 0.0), &mut s, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.37, -2.5] {
            let mut p = params();
            let before = p.clone();
            let mut s = OptimizerState::new(&p);
            adam_step(&mut p, &filled_like(&before, g), &mut s, 0.01).unwrap();
            let expected = -0.01 * g / (g.abs() + 1e-8);
            for (a, b) in p.tensors().iter().zip(before.tensors()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = params();
        let mut grads = filled_like(&p, 0.1);
        grads[3].set(0, 1, f64::NAN);
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        match adam_step(&mut p, &grads, &mut s, 0.1) {
            Err(TrainingError::NonFiniteGradient { param, row: 0, col: 1 }) => assert_eq!(param, p.names()[3]),
            other => panic!("{other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }
}
