/// 1-based rank of the positive among `negatives`; ties count against the
/// positive.
pub fn rank_position(positive: f64, negatives: &[f64]) -> usize {
    1 + negatives.iter().filter(|&&s| s >= positive).count()
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k { 1.0 } else { 0.0 }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k { 1.0 / ((rank + 1) as f64).log2() } else { 0.0 }
}

/// Fraction of negatives scored strictly below the positive, ties counted
/// half. An empty negative list gives 1.
pub fn auc(positive: f64, negatives: &[f64]) -> f64 {
    if negatives.is_empty() {
        return 1.0;
    }
    let mut below = 0.0;
    for &s in negatives {
        if s < positive {
            below += 1.0;
        } else if s == positive {
            below += 0.5;
        }
    }
    below / negatives.len() as f64
}
