use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, TrainingExample, PAD};

pub type SeededRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent generator for `(seed, stream, index)`. Work split across
/// threads draws from per-item generators so results never depend on
/// scheduling.
pub fn derive_rng(seed: u64, stream: u64, index: u64) -> SeededRng {
    let mixed = splitmix64(splitmix64(splitmix64(seed) ^ stream.rotate_left(17)) ^ index.rotate_left(41));
    ChaCha8Rng::seed_from_u64(mixed)
}

fn draw_outside(history: &[usize], item_count: usize, rng: &mut impl Rng) -> usize {
    loop {
        let candidate = rng.gen_range(1..=item_count);
        if history.binary_search(&candidate).is_err() {
            return candidate;
        }
    }
}

/// Fills `example.negatives` with one uniform draw from the items outside
/// `history` (sorted, distinct) for every unmasked position; masked
/// positions get [`PAD`].
pub fn sample_negatives(example: &mut TrainingExample, item_count: usize, history: &[usize], rng: &mut impl Rng) -> Result<(), DataError> {
    let available = item_count.saturating_sub(history.len());
    if available == 0 {
        return Err(DataError::Sampling { interacted: history.len(), item_count });
    }
    let complement: Option<Vec<usize>> =
        (history.len() * 2 >= item_count).then(|| (1..=item_count).filter(|i| history.binary_search(i).is_err()).collect());
    for (slot, &live) in example.negatives.iter_mut().zip(&example.mask) {
        *slot = if !live {
            PAD
        } else if let Some(c) = &complement {
            c[rng.gen_range(0..c.len())]
        } else {
            draw_outside(history, item_count, rng)
        };
    }
    Ok(())
}

/// Candidate list for ranking: `positive` first, followed by `k` distinct
/// items outside `history` (sorted, distinct).
pub fn sample_eval_candidates(positive: usize, history: &[usize], k: usize, item_count: usize, rng: &mut impl Rng) -> Result<Vec<usize>, DataError> {
    let available = item_count.saturating_sub(history.len());
    if available < k {
        return Err(DataError::InsufficientCandidates { needed: k, available });
    }
    let mut out = Vec::with_capacity(k + 1);
    out.push(positive);
    if k * 4 > available {
        let complement: Vec<usize> = (1..=item_count).filter(|i| history.binary_search(i).is_err()).collect();
        out.extend(index::sample(rng, complement.len(), k).into_iter().map(|i| complement[i]));
    } else {
        let mut seen = HashSet::with_capacity(k);
        while seen.len() < k {
            let c = draw_outside(history, item_count, rng);
            if seen.insert(c) {
                out.push(c);
            }
        }
    }
    Ok(out)
}
