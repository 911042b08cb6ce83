use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

use super::InteractionLog;

/// Number of calendar features derived from a timestamp.
pub const CONTEXT_DIM: usize = 6;

/// Raw UTC calendar features of a unix timestamp:
/// `(day of month, month, year, day of week (Mon=1), day of year, ISO week)`.
pub fn featurize_context(ts: i64) -> [f64; CONTEXT_DIM] {
    let dt = DateTime::from_timestamp(ts, 0).unwrap_or(DateTime::UNIX_EPOCH);
    let date = dt.date_naive();
    [
        date.day() as f64,
        date.month() as f64,
        date.year() as f64,
        date.weekday().number_from_monday() as f64,
        date.ordinal() as f64,
        date.iso_week().week() as f64,
    ]
}

/// Min-max scaling of the calendar features, fitted on training
/// interactions. Constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextFeaturizer {
    pub min: [f64; CONTEXT_DIM],
    pub max: [f64; CONTEXT_DIM],
}

impl ContextFeaturizer {
    pub fn fit(timestamps: impl IntoIterator<Item = i64>) -> Self {
        let mut min = [f64::INFINITY; CONTEXT_DIM];
        let mut max = [f64::NEG_INFINITY; CONTEXT_DIM];
        let mut any = false;
        for ts in timestamps {
            any = true;
            let f = featurize_context(ts);
            for k in 0..CONTEXT_DIM {
                min[k] = min[k].min(f[k]);
                max[k] = max[k].max(f[k]);
            }
        }
        if !any {
            return Self { min: [0.0; CONTEXT_DIM], max: [0.0; CONTEXT_DIM] };
        }
        Self { min, max }
    }

    pub fn transform(&self, ts: i64) -> [f64; CONTEXT_DIM] {
        let raw = featurize_context(ts);
        let mut out = [0.0; CONTEXT_DIM];
        for k in 0..CONTEXT_DIM {
            let span = self.max[k] - self.min[k];
            out[k] = if span > 0.0 { (raw[k] - self.min[k]) / span } else { 0.0 };
        }
        out
    }
}

/// Fits the normalizer on every record of `log`.
pub fn fit_normalizer(log: &InteractionLog) -> ContextFeaturizer {
    ContextFeaturizer::fit(log.users().iter().flat_map(|u| u.timestamps.iter().copied()))
}
