use serde::{Deserialize, Serialize};

use super::{ContextFeaturizer, DataError, InteractionLog, UserHistory, CONTEXT_DIM, PAD};
use crate::numerics::Matrix;

/// Fixed-length training window for one user.
///
/// Row `r` pairs the profile item `profile_items[r]` with its successor
/// `positives[r]` and a sampled `negatives[r]`; both targets use the
/// positive's context row `target_ctx[r]`. Windows are left-padded, so the
/// most recent interaction is always the last row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// Index into [`SplitBundle::users`].
    pub user: usize,
    pub profile_items: Vec<usize>,
    pub profile_ctx: Matrix,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub target_ctx: Matrix,
    pub mask: Vec<bool>,
}

/// Held-out interaction with the profile that precedes it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub user: usize,
    pub profile_items: Vec<usize>,
    pub profile_ctx: Matrix,
    pub mask: Vec<bool>,
    pub target_item: usize,
    /// `1×CONTEXT_DIM`, shared by every candidate scored against this case.
    pub target_ctx: Matrix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: u64,
    /// Every item the user ever interacted with, sorted and distinct.
    pub interacted: Vec<usize>,
}

/// Leave-one-out split: per user the last interaction is the test target,
/// the second-to-last the validation target, and the rest is training data.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub max_len: usize,
    pub featurizer: ContextFeaturizer,
    pub users: Vec<UserRecord>,
    pub train: Vec<TrainingExample>,
    pub validation: Vec<EvalCase>,
    pub test: Vec<EvalCase>,
}

impl SplitBundle {
    /// Items seen in training interactions (all but the last two per user).
    pub fn training_items(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().flat_map(|ex| {
            let first = ex.mask.iter().position(|m| *m);
            first.map(|f| ex.profile_items[f]).into_iter().chain(ex.positives.iter().zip(&ex.mask).filter(|(_, m)| **m).map(|(p, _)| *p))
        })
    }
}

fn context_rows(featurizer: &ContextFeaturizer, timestamps: &[i64], n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, CONTEXT_DIM);
    let pad = n - timestamps.len();
    for (k, &ts) in timestamps.iter().enumerate() {
        m.row_mut(pad + k).copy_from_slice(&featurizer.transform(ts));
    }
    m
}

fn left_pad(items: &[usize], n: usize) -> (Vec<usize>, Vec<bool>) {
    let pad = n - items.len();
    let mut out = vec![PAD; pad];
    out.extend_from_slice(items);
    let mut mask = vec![false; pad];
    mask.extend(std::iter::repeat(true).take(items.len()));
    (out, mask)
}

fn last_n<T>(xs: &[T], n: usize) -> &[T] {
    &xs[xs.len().saturating_sub(n)..]
}

fn eval_case(featurizer: &ContextFeaturizer, user: usize, h: &UserHistory, target: usize, n: usize) -> EvalCase {
    let items = last_n(&h.items[..target], n);
    let ts = last_n(&h.timestamps[..target], n);
    let (profile_items, mask) = left_pad(items, n);
    EvalCase {
        user,
        profile_items,
        profile_ctx: context_rows(featurizer, ts, n),
        mask,
        target_item: h.items[target],
        target_ctx: Matrix::row_vector(&featurizer.transform(h.timestamps[target])),
    }
}

/// Builds the leave-one-out split with windows of length `max_len`.
///
/// For a history `h[0..T]` the training sequence is `h[0..T-2]`; its window
/// pairs inputs `h[0..T-3]` with positives `h[1..T-2]`, truncated to the most
/// recent `max_len` pairs and left-padded. Users whose training sequence has
/// a single interaction contribute no window. The context normalizer is
/// fitted on the training sequences only.
pub fn build_splits(log: &InteractionLog, max_len: usize) -> Result<SplitBundle, DataError> {
    if max_len < 2 {
        return Err(DataError::Invalid(format!("max sequence length must be at least 2, got {max_len}")));
    }
    let histories: Vec<&UserHistory> = log.users().iter().filter(|h| h.len() >= 3).collect();
    let featurizer = ContextFeaturizer::fit(histories.iter().flat_map(|h| h.timestamps[..h.len() - 2].iter().copied()));

    let mut bundle = SplitBundle { max_len, featurizer, users: Vec::new(), train: Vec::new(), validation: Vec::new(), test: Vec::new() };
    for (user, h) in histories.into_iter().enumerate() {
        bundle.users.push(UserRecord { user_id: h.user_id, interacted: h.item_set() });
        let t = h.len();
        let seq_len = t - 2;
        if seq_len >= 2 {
            let inputs = last_n(&h.items[..seq_len - 1], max_len);
            let input_ts = last_n(&h.timestamps[..seq_len - 1], max_len);
            let positives = last_n(&h.items[1..seq_len], max_len);
            let positive_ts = last_n(&h.timestamps[1..seq_len], max_len);
            let (profile_items, mask) = left_pad(inputs, max_len);
            let (positives, _) = left_pad(positives, max_len);
            bundle.train.push(TrainingExample {
                user,
                profile_items,
                profile_ctx: context_rows(&bundle.featurizer, input_ts, max_len),
                positives,
                negatives: vec![PAD; max_len],
                target_ctx: context_rows(&bundle.featurizer, positive_ts, max_len),
                mask,
            });
        }
        bundle.validation.push(eval_case(&bundle.featurizer, user, h, t - 2, max_len));
        bundle.test.push(eval_case(&bundle.featurizer, user, h, t - 1, max_len));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_of(items: &[usize]) -> InteractionLog {
        InteractionLog::from_records(items.iter().enumerate().map(|(k, &i)| (1, i, 86_400 * k as i64)))
    }

    #[test]
    fn minimal_user_has_no_training_window() {
        let b = build_splits(&log_of(&[10, 20, 30]), 5).unwrap();
        assert!(b.train.is_empty());
        assert_eq!(b.validation[0].target_item, 20);
        assert_eq!(b.validation[0].profile_items, vec![0, 0, 0, 0, 10]);
        assert_eq!(b.test[0].target_item, 30);
        assert_eq!(b.test[0].profile_items, vec![0, 0, 0, 10, 20]);
        assert_eq!(b.test[0].mask, vec![false, false, false, true, true]);
    }

    #[test]
    fn ten_interactions_window_arithmetic() {
        // items 1..=10 in order; training sequence is 1..=8
        let items: Vec<usize> = (1..=10).collect();
        let b = build_splits(&log_of(&items), 5).unwrap();
        let ex = &b.train[0];
        assert_eq!(ex.profile_items, vec![3, 4, 5, 6, 7]);
        assert_eq!(ex.positives, vec![4, 5, 6, 7, 8]);
        assert_eq!(ex.mask, vec![true; 5]);
        assert_eq!(b.validation[0].target_item, 9);
        assert_eq!(b.validation[0].profile_items, vec![4, 5, 6, 7, 8]);
        assert_eq!(b.test[0].target_item, 10);
        assert_eq!(b.test[0].profile_items, vec![5, 6, 7, 8, 9]);
        // target context row r is the context of the positive interaction
        for r in 0..5 {
            let ts = 86_400 * (ex.positives[r] as i64 - 1);
            assert_eq!(ex.target_ctx.row(r), &b.featurizer.transform(ts));
        }
    }

    #[test]
    fn long_windows_are_left_padded() {
        let b = build_splits(&log_of(&[1, 2, 3, 4, 5]), 50).unwrap();
        let ex = &b.train[0];
        assert_eq!(ex.profile_items.len(), 50);
        assert_eq!(&ex.profile_items[48..], &[1, 2]);
        assert_eq!(&ex.positives[48..], &[2, 3]);
        assert!(ex.profile_items[..48].iter().all(|i| *i == PAD));
        assert_eq!(ex.mask.iter().filter(|m| **m).count(), 2);
        assert!(ex.profile_ctx.row(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_short_window() {
        assert!(build_splits(&log_of(&[1, 2, 3]), 1).is_err());
    }
}
