#![allow(dead_code)]

pub mod oracle;

use carca_core::data::{build_splits, parse_interactions, ItemCatalog, SplitBundle};
use carca_core::numerics::Matrix;

pub const DAY: i64 = 86_400;

/// Interaction TSV where user `u` loops over a private cycle of 3 to 5
/// items, one interaction per day.
pub fn cycle_interactions(users: usize, items: usize, len: usize) -> String {
    let mut text = String::new();
    for u in 0..users {
        let cycle_len = 3 + u % 3;
        let cycle: Vec<usize> = (0..cycle_len).map(|j| 1 + (u * 7 + j * 11) % items).collect();
        let start = 1_600_000_000 + u as i64 * 5 * DAY;
        for t in 0..len {
            text.push_str(&format!("{}\t{}\t{}\n", 100 + u, cycle[t % cycle_len], start + t as i64 * DAY));
        }
    }
    text
}

/// Four dense attribute columns per item.
pub fn cycle_attributes(items: usize) -> ItemCatalog {
    let mut m = Matrix::zeros(items, 4);
    for i in 0..items {
        m.set(i, i % 4, 1.0);
        m.set(i, 3, (i as f64 / items as f64) - 0.5);
    }
    ItemCatalog::new(m).unwrap()
}

pub fn cycle_dataset(max_len: usize) -> (SplitBundle, ItemCatalog) {
    let catalog = cycle_attributes(30);
    let log = parse_interactions(&cycle_interactions(20, 30, 8), "cycles", Some(&catalog)).unwrap();
    (build_splits(&log, max_len).unwrap(), catalog)
}
