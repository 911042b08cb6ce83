/// Gini coefficient of item frequencies over a catalog of `item_count`
/// items; items never seen count as zero frequency. Ids outside
/// `1..=item_count` are ignored. Returns 0 for an empty multiset.
pub fn gini_index(items: &[usize], item_count: usize) -> f64 {
    let mut freq = vec![0.0f64; item_count];
    for &i in items {
        if (1..=item_count).contains(&i) {
            freq[i - 1] += 1.0;
        }
    }
    gini_of_frequencies(&freq)
}

/// Gini coefficient of a non-negative frequency vector, via the sorted form
/// `Σ (2i − n − 1) x_(i) / (n Σ x)`.
pub fn gini_of_frequencies(freq: &[f64]) -> f64 {
    let n = freq.len();
    let total: f64 = freq.iter().sum();
    if n == 0 || total <= 0.0 {
        return 0.0;
    }
    let mut sorted = freq.to_vec();
    sorted.sort_by(f64::total_cmp);
    let weighted: f64 = sorted.iter().enumerate().map(|(i, x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x).sum();
    weighted / (n as f64 * total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_frequencies_are_zero() {
        assert_eq!(gini_index(&[1, 2, 3, 1, 2, 3], 3), 0.0);
        assert_eq!(gini_index(&[], 3), 0.0);
    }

    #[test]
    fn concentrated_mass_approaches_one() {
        let g = gini_index(&[7; 40], 1000);
        assert!((g - (1.0 - 1.0 / 1000.0)).abs() < 1e-12);
    }

    #[test]
    fn unseen_items_raise_inequality() {
        assert!(gini_index(&[1, 2], 4) > gini_index(&[1, 2], 2));
    }
}
