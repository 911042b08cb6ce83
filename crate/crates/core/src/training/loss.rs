use std::sync::atomic::{AtomicUsize, Ordering};

use crate::model::{ModelParams, ParamKind};
use crate::numerics::{bce_value, Matrix};

static ALL_MASKED: AtomicUsize = AtomicUsize::new(0);

/// How many loss evaluations so far had every position masked.
pub fn all_masked_warnings() -> usize {
    ALL_MASKED.load(Ordering::Relaxed)
}

pub(crate) fn note_if_all_masked(mask: &[bool]) {
    if !mask.iter().any(|m| *m) {
        ALL_MASKED.fetch_add(1, Ordering::Relaxed);
        log::warn!("loss evaluated with every position masked");
    }
}

/// List-wise binary cross-entropy summed over unmasked positions, scores
/// clamped away from 0 and 1.
pub fn bce_loss(positive: &[f64], negative: &[f64], mask: &[bool]) -> f64 {
    note_if_all_masked(mask);
    bce_value(positive, negative, mask)
}

/// `weight × Σ‖W‖²` over weight matrices; biases and normalisation
/// parameters are exempt.
pub fn l2_penalty(params: &ModelParams, weight: f64) -> f64 {
    l2_penalty_of(params.tensors(), params.kinds(), weight)
}

pub(crate) fn l2_penalty_of(tensors: &[Matrix], kinds: &[ParamKind], weight: f64) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    weight * tensors.iter().zip(kinds).filter(|(_, k)| **k == ParamKind::Weight).map(|(t, _)| t.sum_squares()).sum::<f64>()
}

/// Adds the gradient of the L2 term to `grads`.
pub(crate) fn add_l2_gradient(grads: &mut [Matrix], tensors: &[Matrix], kinds: &[ParamKind], weight: f64) {
    if weight == 0.0 {
        return;
    }
    for ((g, t), k) in grads.iter_mut().zip(tensors).zip(kinds) {
        if *k == ParamKind::Weight {
            for (gi, ti) in g.data_mut().iter_mut().zip(t.data()) {
                *gi += 2.0 * weight * ti;
            }
        }
    }
}
