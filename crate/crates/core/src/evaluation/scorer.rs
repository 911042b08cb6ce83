use rand::Rng;

use super::EvaluationError;
use crate::data::{EvalCase, ItemCatalog, SeededRng};
use crate::model::Model;
use crate::numerics::Matrix;

/// Anything that scores a candidate list for one held-out case. Higher is
/// better. `rng` is private to this (run, user) pair, so stochastic
/// scorers stay deterministic under parallel evaluation.
pub trait Scorer: Sync {
    fn score(&self, case: &EvalCase, candidates: &[usize], rng: &mut SeededRng) -> Result<Vec<f64>, EvaluationError>;
}

/// Uniform random scores.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomScorer;

impl Scorer for RandomScorer {
    fn score(&self, _case: &EvalCase, candidates: &[usize], rng: &mut SeededRng) -> Result<Vec<f64>, EvaluationError> {
        Ok(candidates.iter().map(|_| rng.gen::<f64>()).collect())
    }
}

/// The same score for every candidate.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score(&self, _case: &EvalCase, candidates: &[usize], _rng: &mut SeededRng) -> Result<Vec<f64>, EvaluationError> {
        Ok(vec![self.0; candidates.len()])
    }
}

/// Scores items by how often they occur in the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityScorer {
    counts: Vec<f64>,
}

impl PopularityScorer {
    /// Count for `item`; unseen or unknown items score 0.
    pub fn count(&self, item: usize) -> f64 {
        self.counts.get(item).copied().unwrap_or(0.0)
    }
}

/// Popularity scorer from the training interactions `items` over a catalog
/// of `item_count` items.
pub fn popularity_baseline(items: impl IntoIterator<Item = usize>, item_count: usize) -> PopularityScorer {
    let mut counts = vec![0.0; item_count + 1];
    for i in items {
        if (1..=item_count).contains(&i) {
            counts[i] += 1.0;
        }
    }
    PopularityScorer { counts }
}

impl Scorer for PopularityScorer {
    fn score(&self, _case: &EvalCase, candidates: &[usize], _rng: &mut SeededRng) -> Result<Vec<f64>, EvaluationError> {
        Ok(candidates.iter().map(|&i| self.count(i)).collect())
    }
}

/// A frozen model plus the catalog its inputs are drawn from. Every
/// candidate shares the held-out interaction's context row.
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub catalog: &'a ItemCatalog,
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, case: &EvalCase, candidates: &[usize], _rng: &mut SeededRng) -> Result<Vec<f64>, EvaluationError> {
        let profile = self.model.input(&case.profile_items, &case.profile_ctx, self.catalog)?;
        let ctx_row = case.target_ctx.row(0);
        let mut ctx = Matrix::zeros(candidates.len(), ctx_row.len());
        for r in 0..candidates.len() {
            ctx.row_mut(r).copy_from_slice(ctx_row);
        }
        let targets = self.model.input(candidates, &ctx, self.catalog)?;
        Ok(self.model.score(&profile, &targets)?)
    }
}
