//! Ranking metrics and the sampled-negative leave-one-out protocol.
//!
//! Each case ranks its held-out item against `negatives` items the user
//! never interacted with, all sharing the held-out context. Metrics are
//! averaged over users per run; a report holds every run plus the mean and
//! sample standard deviation across runs.

mod gini;
mod metrics;
mod scorer;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{derive_rng, sample_eval_candidates, DataError, EvalCase, UserRecord};
use crate::model::ModelError;

pub use gini::{gini_index, gini_of_frequencies};
pub use metrics::{auc, hr_at_k, ndcg_at_k, rank_position};
pub use scorer::{popularity_baseline, ConstantScorer, ModelScorer, PopularityScorer, RandomScorer, Scorer};

const CANDIDATE_STREAM: u64 = 0xe7a1;
const SCORE_STREAM: u64 = 0x5c03;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scorer returned {got} scores for {expected} candidates")]
    ScoreCount { expected: usize, got: usize },
    #[error("invalid protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSet {
    /// HR@K and NDCG@K.
    Ranking,
    /// NDCG@K and AUC.
    Auc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    pub k: usize,
    pub negatives: usize,
    pub seeds: Vec<u64>,
    pub metrics: MetricSet,
}

impl Default for Protocol {
    fn default() -> Self {
        Self::ranking()
    }
}

impl Protocol {
    /// 100 negatives, K=10, seeds 1..=5.
    pub fn ranking() -> Self {
        Self { k: 10, negatives: 100, seeds: (1..=5).collect(), metrics: MetricSet::Ranking }
    }

    /// 500 negatives, NDCG@10 and AUC, seeds 1..=5.
    pub fn auc() -> Self {
        Self { k: 10, negatives: 500, seeds: (1..=5).collect(), metrics: MetricSet::Auc }
    }

    pub fn with_seeds(mut self, seeds: impl IntoIterator<Item = u64>) -> Self {
        self.seeds = seeds.into_iter().collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hr: Option<f64>,
    pub ndcg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hr: Option<f64>,
    pub ndcg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

/// Result of [`evaluate`]. Serialized with serde; see the README for the
/// field list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub k: usize,
    pub negatives: usize,
    pub users: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunMetrics>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

impl RankingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct CaseMetrics {
    hr: f64,
    ndcg: f64,
    auc: f64,
}

fn evaluate_case(
    scorer: &dyn Scorer,
    case: &EvalCase,
    history: &[usize],
    item_count: usize,
    protocol: &Protocol,
    seed: u64,
) -> Result<CaseMetrics, EvaluationError> {
    let index = case.user as u64;
    let mut sample_rng = derive_rng(seed, CANDIDATE_STREAM, index);
    let candidates = sample_eval_candidates(case.target_item, history, protocol.negatives, item_count, &mut sample_rng)?;
    let mut score_rng = derive_rng(seed, SCORE_STREAM, index);
    let scores = scorer.score(case, &candidates, &mut score_rng)?;
    if scores.len() != candidates.len() {
        return Err(EvaluationError::ScoreCount { expected: candidates.len(), got: scores.len() });
    }
    let rank = rank_position(scores[0], &scores[1..]);
    Ok(CaseMetrics {
        hr: hr_at_k(rank, protocol.k),
        ndcg: ndcg_at_k(rank, protocol.k),
        auc: auc(scores[0], &scores[1..]),
    })
}

/// Mean metrics of one run over `cases`. Users are scored in parallel and
/// reduced in case order.
pub fn evaluate_run(
    scorer: &dyn Scorer,
    cases: &[EvalCase],
    users: &[UserRecord],
    item_count: usize,
    protocol: &Protocol,
    seed: u64,
) -> Result<RunMetrics, EvaluationError> {
    let per_case = cases
        .par_iter()
        .map(|case| {
            let history = &users.get(case.user).ok_or_else(|| EvaluationError::Protocol(format!("case refers to unknown user {}", case.user)))?.interacted;
            evaluate_case(scorer, case, history, item_count, protocol, seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = per_case.len().max(1) as f64;
    let (mut hr, mut ndcg, mut area) = (0.0, 0.0, 0.0);
    for m in &per_case {
        hr += m.hr;
        ndcg += m.ndcg;
        area += m.auc;
    }
    let ranking = protocol.metrics == MetricSet::Ranking;
    Ok(RunMetrics {
        seed,
        hr: ranking.then_some(hr / n),
        ndcg: ndcg / n,
        auc: (!ranking).then_some(area / n),
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(runs: &[RunMetrics]) -> (MetricSummary, MetricSummary) {
    let column = |f: &dyn Fn(&RunMetrics) -> Option<f64>| -> Option<(f64, f64)> {
        let values: Option<Vec<f64>> = runs.iter().map(f).collect();
        values.map(|v| mean_std(&v))
    };
    let hr = column(&|r| r.hr);
    let auc = column(&|r| r.auc);
    let ndcg = column(&|r| Some(r.ndcg)).expect("ndcg always present");
    (
        MetricSummary { hr: hr.map(|m| m.0), ndcg: ndcg.0, auc: auc.map(|m| m.0) },
        MetricSummary { hr: hr.map(|m| m.1), ndcg: ndcg.1, auc: auc.map(|m| m.1) },
    )
}

/// Runs `protocol` once per seed. A pure function of its arguments.
pub fn evaluate(
    scorer: &dyn Scorer,
    cases: &[EvalCase],
    users: &[UserRecord],
    item_count: usize,
    protocol: &Protocol,
) -> Result<RankingReport, EvaluationError> {
    if protocol.seeds.is_empty() || protocol.k == 0 {
        return Err(EvaluationError::Protocol("need at least one seed and k >= 1".into()));
    }
    let runs = protocol
        .seeds
        .iter()
        .map(|&seed| evaluate_run(scorer, cases, users, item_count, protocol, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let (mean, std) = summarize(&runs);
    Ok(RankingReport { k: protocol.k, negatives: protocol.negatives, users: cases.len(), seeds: protocol.seeds.clone(), runs, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn synthetic(users: usize, item_count: usize) -> (Vec<EvalCase>, Vec<UserRecord>) {
        let mut cases = Vec::new();
        let mut records = Vec::new();
        for u in 0..users {
            let target = 1 + (u * 7) % item_count;
            cases.push(EvalCase {
                user: u,
                profile_items: vec![0],
                profile_ctx: Matrix::zeros(1, 6),
                mask: vec![false],
                target_item: target,
                target_ctx: Matrix::zeros(1, 6),
            });
            records.push(UserRecord { user_id: u as u64, interacted: vec![target] });
        }
        (cases, records)
    }

    #[test]
    fn constant_scorer_never_hits() {
        let (cases, users) = synthetic(50, 200);
        let report = evaluate(&ConstantScorer(0.3), &cases, &users, 200, &Protocol::ranking()).unwrap();
        assert_eq!(report.mean.hr, Some(0.0));
        assert_eq!(report.runs.len(), 5);
    }

    #[test]
    fn random_scorer_near_chance() {
        let (cases, users) = synthetic(2000, 300);
        let p = Protocol::ranking().with_seeds([1]);
        let r = evaluate(&RandomScorer, &cases, &users, 300, &p).unwrap();
        assert!((r.mean.hr.unwrap() - 10.0 / 101.0).abs() < 0.03);
    }

    #[test]
    fn reports_are_deterministic_and_means_match_runs() {
        let (cases, users) = synthetic(300, 120);
        let a = evaluate(&RandomScorer, &cases, &users, 120, &Protocol::ranking()).unwrap();
        let b = evaluate(&RandomScorer, &cases, &users, 120, &Protocol::ranking()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let hrs: Vec<f64> = a.runs.iter().map(|r| r.hr.unwrap()).collect();
        let mean = hrs.iter().sum::<f64>() / 5.0;
        assert!((a.mean.hr.unwrap() - mean).abs() < 1e-12);
        let (lo, hi) = hrs.iter().fold((1.0f64, 0.0f64), |(lo, hi), h| (lo.min(*h), hi.max(*h)));
        assert!(lo <= a.mean.hr.unwrap() && a.mean.hr.unwrap() <= hi);
    }

    #[test]
    fn auc_protocol_omits_hr() {
        let (cases, users) = synthetic(40, 700);
        let r = evaluate(&RandomScorer, &cases, &users, 700, &Protocol::auc()).unwrap();
        assert!(r.mean.hr.is_none() && r.mean.auc.is_some());
        let json = r.to_json();
        assert!(json.contains("\"auc\"") && !json.contains("\"hr\""));
        let back: RankingReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn too_few_items_is_an_error() {
        let (cases, users) = synthetic(3, 50);
        assert!(matches!(
            evaluate(&RandomScorer, &cases, &users, 50, &Protocol::ranking()),
            Err(EvaluationError::Data(DataError::InsufficientCandidates { .. }))
        ));
    }

    #[test]
    fn popularity_counts_and_unseen() {
        let items = [3, 1, 3, 2, 3, 1];
        let pop = popularity_baseline(items, 5);
        let mut tally = std::collections::HashMap::new();
        for i in items {
            *tally.entry(i).or_insert(0.0) += 1.0;
        }
        for i in 1..=5 {
            assert_eq!(pop.count(i), tally.get(&i).copied().unwrap_or(0.0));
        }
        assert_eq!(pop.count(99), 0.0);
        let (cases, _) = synthetic(1, 5);
        let mut rng = derive_rng(0, 0, 0);
        let s = pop.score(&cases[0], &[1, 2, 3, 4], &mut rng).unwrap();
        let best = (0..4).max_by(|a, b| s[*a].total_cmp(&s[*b])).unwrap();
        assert_eq!(best, 2);
    }
}
