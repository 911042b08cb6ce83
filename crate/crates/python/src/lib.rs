//! Python bindings. Structured values (hyper-parameters, configs, reports,
//! training history) cross the boundary as plain dicts and lists; datasets
//! and models are opaque classes.

use std::path::PathBuf;

use carca_core::config::{ablation_name as core_ablation_name, apply_ablation as core_apply_ablation, RunConfig};
use carca_core::data::{build_splits, derive_rng, load_attributes, load_interactions, InteractionLog, ItemCatalog, SplitBundle, MIN_INTERACTIONS, PAD};
use carca_core::evaluation::{self as eval, popularity_baseline, ConstantScorer, ModelScorer, Protocol, RandomScorer, Scorer};
use carca_core::model::{load_checkpoint, save_checkpoint, HyperParams};
use carca_core::numerics::Matrix;
use carca_core::training::{dims_for, train as core_train, TrainConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(carca, CarcaError, PyException);

fn fail(e: impl std::fmt::Display) -> PyErr {
    CarcaError::new_err(e.to_string())
}

/// Reads a dict (or `None` for the default) through the serde schema, so
/// unknown keys are rejected exactly as in config files.
fn from_py<T: DeserializeOwned + Default>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(obj) = obj.filter(|o| !o.is_none()) else {
        return Ok(T::default());
    };
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(fail)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// An interaction log plus its item catalog.
#[pyclass(module = "carca", frozen)]
struct Dataset {
    log: InteractionLog,
    catalog: ItemCatalog,
}

impl Dataset {
    fn splits(&self, max_len: usize) -> PyResult<SplitBundle> {
        build_splits(&self.log, max_len).map_err(fail)
    }
}

#[pymethods]
impl Dataset {
    /// Reads the tab-separated interaction file and, optionally, the item
    /// attribute file. Users with fewer than three interactions are dropped.
    #[staticmethod]
    #[pyo3(signature = (interactions, attributes = None))]
    fn load(py: Python<'_>, interactions: PathBuf, attributes: Option<PathBuf>) -> PyResult<Self> {
        py.detach(|| {
            let catalog = attributes.map(|p| load_attributes(&p)).transpose().map_err(fail)?;
            let log = load_interactions(&interactions, catalog.as_ref()).map_err(fail)?;
            let catalog = catalog.unwrap_or_else(|| ItemCatalog::without_attributes(log.max_item()));
            Ok(Self { log, catalog })
        })
    }

    /// Builds a dataset from `(user, item, timestamp)` tuples. `attributes`
    /// holds one row per item id, starting at item 1.
    #[staticmethod]
    #[pyo3(signature = (records, attributes = None))]
    fn from_records(records: Vec<(u64, usize, i64)>, attributes: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let catalog = match attributes {
            Some(rows) => Some(ItemCatalog::new(Matrix::from_rows(&rows).map_err(fail)?).map_err(fail)?),
            None => None,
        };
        if let Some((_, item, _)) = records.iter().find(|(_, item, _)| *item == PAD || catalog.as_ref().is_some_and(|c| !c.contains(*item))) {
            return Err(PyValueError::new_err(format!("item id {item} is outside the catalog")));
        }
        let mut log = InteractionLog::from_records(records);
        log.retain_min_interactions(MIN_INTERACTIONS);
        let catalog = catalog.unwrap_or_else(|| ItemCatalog::without_attributes(log.max_item()));
        Ok(Self { log, catalog })
    }

    #[getter]
    fn user_count(&self) -> usize {
        self.log.user_count()
    }

    #[getter]
    fn item_count(&self) -> usize {
        self.catalog.item_count()
    }

    #[getter]
    fn interaction_count(&self) -> usize {
        self.log.interaction_count()
    }

    #[getter]
    fn attr_dim(&self) -> usize {
        self.catalog.attr_dim()
    }

    /// Copy without item attributes.
    fn without_attributes(&self) -> Self {
        Self { log: self.log.clone(), catalog: self.catalog.strip_attributes() }
    }

    /// `(training windows, validation cases, test cases)` for `max_len`.
    #[pyo3(signature = (max_len = 50))]
    fn split_sizes(&self, max_len: usize) -> PyResult<(usize, usize, usize)> {
        let b = self.splits(max_len)?;
        Ok((b.train.len(), b.validation.len(), b.test.len()))
    }

    /// Gini index of item frequencies in the training part of the split.
    #[pyo3(signature = (max_len = 50))]
    fn training_gini(&self, max_len: usize) -> PyResult<f64> {
        let items: Vec<usize> = self.splits(max_len)?.training_items().collect();
        Ok(eval::gini_index(&items, self.catalog.item_count()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(users={}, items={}, interactions={}, attr_dim={})",
            self.log.user_count(),
            self.catalog.item_count(),
            self.log.interaction_count(),
            self.catalog.attr_dim()
        )
    }
}

#[pyclass(module = "carca", frozen)]
struct Model {
    inner: carca_core::model::Model,
}

impl Model {
    fn check(&self, dataset: &Dataset) -> PyResult<()> {
        let dims = dims_for(&dataset.catalog);
        if dims != self.inner.dims {
            return Err(fail(format!("model was built for {:?}, dataset has {:?}", self.inner.dims, dims)));
        }
        Ok(())
    }
}

#[pymethods]
impl Model {
    /// Freshly initialised model sized for `dataset`.
    #[new]
    #[pyo3(signature = (dataset, hyper = None, seed = 0))]
    fn new(py: Python<'_>, dataset: &Dataset, hyper: Option<&Bound<'_, PyAny>>, seed: u64) -> PyResult<Self> {
        let hp: HyperParams = from_py(py, hyper)?;
        let inner = carca_core::model::Model::init(hp, dims_for(&dataset.catalog), seed).map_err(fail)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_checkpoint(&path).map_err(fail)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(fail)
    }

    #[getter]
    fn hyper<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.hp)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.params.parameter_count()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner.params.names().to_vec()
    }

    /// Rows of the named parameter tensor.
    fn parameter(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.params.get(name).ok_or_else(|| PyValueError::new_err(format!("no parameter {name:?}")))?;
        Ok((0..m.rows()).map(|r| m.row(r).to_vec()).collect())
    }

    /// Scores `candidates` for the held-out case of user `user` (an index
    /// into the dataset's users) in `split`.
    #[pyo3(signature = (dataset, user, candidates, split = "test"))]
    fn score(&self, py: Python<'_>, dataset: &Dataset, user: usize, candidates: Vec<usize>, split: &str) -> PyResult<Vec<f64>> {
        self.check(dataset)?;
        py.detach(|| {
            let bundle = dataset.splits(self.inner.hp.max_len)?;
            let cases = split_cases(&bundle, split)?;
            let case = cases.iter().find(|c| c.user == user).ok_or_else(|| PyValueError::new_err(format!("no {split} case for user {user}")))?;
            let scorer = ModelScorer { model: &self.inner, catalog: &dataset.catalog };
            scorer.score(case, &candidates, &mut derive_rng(0, 0, 0)).map_err(fail)
        })
    }

    fn __repr__(&self) -> String {
        format!("Model(items={}, parameters={})", self.inner.dims.num_items, self.inner.params.parameter_count())
    }
}

fn split_cases<'a>(bundle: &'a SplitBundle, split: &str) -> PyResult<&'a [carca_core::data::EvalCase]> {
    match split {
        "test" => Ok(&bundle.test),
        "validation" => Ok(&bundle.validation),
        other => Err(PyValueError::new_err(format!("split must be \"test\" or \"validation\", not {other:?}"))),
    }
}

/// Trains a model. `hyper` and `config` are dicts with the keys of the
/// `[model]` and `[train]` config sections; `ablation` applies one of the
/// numbered variants on top of `hyper`. Returns a dict with the best and
/// final models, the per-epoch history, `best_epoch` and `stopped_early`.
#[pyfunction]
#[pyo3(signature = (dataset, hyper = None, config = None, ablation = 1))]
fn train<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    hyper: Option<&Bound<'py, PyAny>>,
    config: Option<&Bound<'py, PyAny>>,
    ablation: u8,
) -> PyResult<Bound<'py, PyDict>> {
    let hp = core_apply_ablation(&from_py(py, hyper)?, ablation).map_err(fail)?;
    let cfg: TrainConfig = from_py(py, config)?;
    let outcome = py.detach(|| {
        let bundle = dataset.splits(hp.max_len)?;
        core_train(&bundle, &dataset.catalog, &hp, &cfg).map_err(fail)
    })?;
    let out = PyDict::new(py);
    out.set_item("model", Model { inner: outcome.model })?;
    out.set_item("final_model", Model { inner: outcome.final_model })?;
    out.set_item("history", to_py(py, &outcome.history)?)?;
    out.set_item("best_epoch", outcome.best_epoch)?;
    out.set_item("stopped_early", outcome.stopped_early)?;
    Ok(out)
}

/// Runs the evaluation protocol and returns the report as a dict.
/// `scorer` is a `Model`, `"random"`, `"popularity"` or a constant score.
/// Baselines split the data with `max_len`; models use their own.
#[pyfunction]
#[pyo3(signature = (scorer, dataset, protocol = None, split = "test", max_len = 50))]
fn evaluate<'py>(
    py: Python<'py>,
    scorer: &Bound<'py, PyAny>,
    dataset: &Dataset,
    protocol: Option<&Bound<'py, PyAny>>,
    split: &str,
    max_len: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let protocol: Protocol = from_py(py, protocol)?;
    let model = scorer.cast::<Model>().ok().map(|m| m.get());
    if let Some(m) = model {
        m.check(dataset)?;
    }
    let baseline = if model.is_some() {
        None
    } else if let Ok(v) = scorer.extract::<f64>() {
        Some(Baseline::Constant(v))
    } else {
        match scorer.extract::<String>()?.as_str() {
            "random" => Some(Baseline::Random),
            "popularity" => Some(Baseline::Popularity),
            other => return Err(PyValueError::new_err(format!("unknown scorer {other:?}"))),
        }
    };
    let report = py.detach(|| {
        let bundle = dataset.splits(model.map_or(max_len, |m| m.inner.hp.max_len))?;
        let cases = split_cases(&bundle, split)?;
        let item_count = dataset.catalog.item_count();
        let run = |s: &dyn Scorer| eval::evaluate(s, cases, &bundle.users, item_count, &protocol).map_err(fail);
        match (model, baseline) {
            (Some(m), _) => run(&ModelScorer { model: &m.inner, catalog: &dataset.catalog }),
            (None, Some(Baseline::Constant(v))) => run(&ConstantScorer(v)),
            (None, Some(Baseline::Random)) => run(&RandomScorer),
            (None, Some(Baseline::Popularity)) => run(&popularity_baseline(bundle.training_items(), item_count)),
            (None, None) => unreachable!("scorer resolved above"),
        }
    })?;
    to_py(py, &report)
}

enum Baseline {
    Constant(f64),
    Random,
    Popularity,
}

/// 1-based rank of `positive` among `negatives`; ties count against it.
#[pyfunction]
fn rank_position(positive: f64, negatives: Vec<f64>) -> usize {
    eval::rank_position(positive, &negatives)
}

#[pyfunction]
fn hr_at_k(rank: usize, k: usize) -> f64 {
    eval::hr_at_k(rank, k)
}

#[pyfunction]
fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    eval::ndcg_at_k(rank, k)
}

#[pyfunction]
fn auc(positive: f64, negatives: Vec<f64>) -> f64 {
    eval::auc(positive, &negatives)
}

/// Gini index of how often each of the `item_count` items occurs in `items`.
#[pyfunction]
fn gini_index(items: Vec<usize>, item_count: usize) -> f64 {
    eval::gini_index(&items, item_count)
}

#[pyfunction]
fn preset<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
    let hp = HyperParams::preset(name).ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?}")))?;
    to_py(py, &hp)
}

#[pyfunction]
fn ablation_name(id: u8) -> Option<&'static str> {
    core_ablation_name(id)
}

/// `hyper` with the overrides of ablation `id` applied.
#[pyfunction]
#[pyo3(signature = (id, hyper = None))]
fn apply_ablation<'py>(py: Python<'py>, id: u8, hyper: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let hp = core_apply_ablation(&from_py(py, hyper)?, id).map_err(fail)?;
    to_py(py, &hp)
}

/// Parses and validates a TOML run configuration, returning it as a dict.
#[pyfunction]
fn parse_config<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &RunConfig::from_toml(text).map_err(fail)?)
}

#[pymodule]
fn carca(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CarcaError", m.py().get_type::<CarcaError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(rank_position, m)?)?;
    m.add_function(wrap_pyfunction!(hr_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(gini_index, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(ablation_name, m)?)?;
    m.add_function(wrap_pyfunction!(apply_ablation, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<(u64, usize, i64)> {
        (0..12u64).flat_map(|u| (0..6).map(move |t| (u, 1 + ((u as usize) * 3 + t * 5) % 20, 1_000_000 + (u as i64 * 10 + t as i64) * 3600))).collect()
    }

    #[test]
    fn dicts_round_trip_through_serde() {
        Python::attach(|py| {
            let hp = HyperParams::men();
            let obj = to_py(py, &hp).unwrap();
            let back: HyperParams = from_py(py, Some(&obj)).unwrap();
            assert_eq!(back, hp);
            let partial = PyDict::new(py);
            partial.set_item("heads", 2).unwrap();
            let hp: HyperParams = from_py(py, Some(partial.as_any())).unwrap();
            assert_eq!(hp, HyperParams { heads: 2, ..HyperParams::default() });
            partial.set_item("bogus", 1).unwrap();
            assert!(from_py::<HyperParams>(py, Some(partial.as_any())).is_err());
        });
    }

    #[test]
    fn records_are_filtered_and_checked() {
        let mut recs = records();
        recs.push((99, 3, 0));
        let ds = Dataset::from_records(recs.clone(), None).unwrap();
        assert_eq!(ds.user_count(), 12);
        assert_eq!(ds.interaction_count(), 72);
        recs.push((5, 21, 7));
        assert!(Dataset::from_records(recs, Some(vec![vec![1.0]; 20])).is_err());
    }

    #[test]
    fn model_must_match_dataset() {
        Python::attach(|py| {
            let ds = Dataset::from_records(records(), None).unwrap();
            let hyper = to_py(py, &HyperParams { embed_dim: 4, feature_dim: 4, heads: 1, blocks: 1, max_len: 4, ..HyperParams::default() }).unwrap();
            let model = Model::new(py, &ds, Some(&hyper), 3).unwrap();
            let scores = model.score(py, &ds, 0, vec![1, 2, 3], "test").unwrap();
            assert_eq!(scores.len(), 3);
            assert!(model.score(py, &ds, 0, vec![1], "train").is_err());
            let other = Dataset::from_records(records(), Some(vec![vec![0.5, 1.0]; 20])).unwrap();
            assert!(model.check(&other).is_err());
        });
    }
}
