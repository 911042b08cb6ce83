//! The `prepare` artifact: filtered interactions, attributes and context
//! normalisation, written as JSON so later commands rebuild identical splits.

use std::path::Path;

use carca_core::config::RunConfig;
use carca_core::data::{
    build_splits, fit_normalizer, load_attributes, load_interactions, ContextFeaturizer, InteractionLog, ItemCatalog,
    SplitBundle,
};
use carca_core::numerics::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError};

pub const PREPARED_FILE: &str = "prepared.json";
pub const STATS_FILE: &str = "stats.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub attr_dim: usize,
    pub avg_length: f64,
}

impl DatasetStats {
    pub fn table(&self, name: &str) -> String {
        format!(
            "{:<16} {:>8} {:>8} {:>13} {:>9} {:>10}\n{:<16} {:>8} {:>8} {:>13} {:>9} {:>10.2}\n",
            "dataset", "users", "items", "interactions", "attr_dim", "avg_len",
            name, self.users, self.items, self.interactions, self.attr_dim, self.avg_length
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub item_count: usize,
    /// One row per item id starting at 1; `None` when attributes are off.
    pub attributes: Option<Vec<Vec<f64>>>,
    pub featurizer: ContextFeaturizer,
    pub stats: DatasetStats,
    /// `(user, item, timestamp)` after filtering.
    pub interactions: Vec<(u64, usize, i64)>,
}

impl Prepared {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        cfg.check_inputs()?;
        let catalog = match (&cfg.paths.attributes, cfg.features.use_attributes) {
            (Some(path), true) => Some(load_attributes(path)?),
            _ => None,
        };
        let log = load_interactions(&cfg.paths.interactions, catalog.as_ref())?;
        if log.is_empty() {
            return Err(CliError::Data(carca_core::data::DataError::Invalid(
                "no user has enough interactions for a train/validation/test split".into(),
            )));
        }
        let item_count = catalog.as_ref().map_or(log.max_item(), ItemCatalog::item_count);
        let attr_dim = catalog.as_ref().map_or(0, ItemCatalog::attr_dim);
        let stats = DatasetStats {
            users: log.user_count(),
            items: log.distinct_items(),
            interactions: log.interaction_count(),
            attr_dim,
            avg_length: log.interaction_count() as f64 / log.user_count() as f64,
        };
        let attributes = catalog.map(|c| (0..c.item_count()).map(|r| c.attributes().row(r).to_vec()).collect());
        Ok(Self { item_count, attributes, featurizer: fit_normalizer(&log), stats, interactions: log.records().collect() })
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(PREPARED_FILE);
        if !path.is_file() {
            return Err(CliError::Usage(format!("{} not found; run `carca prepare` first", path.display())));
        }
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(PREPARED_FILE);
        std::fs::write(&path, serde_json::to_string(self).expect("prepared data serializes")).map_err(io_err(&path))
    }

    pub fn catalog(&self) -> Result<ItemCatalog, CliError> {
        Ok(match &self.attributes {
            Some(rows) if !rows.is_empty() && !rows[0].is_empty() => ItemCatalog::new(Matrix::from_rows(rows).map_err(carca_core::model::ModelError::from)?)?,
            _ => ItemCatalog::without_attributes(self.item_count),
        })
    }

    pub fn log(&self) -> InteractionLog {
        InteractionLog::from_records(self.interactions.iter().copied())
    }

    pub fn splits(&self, max_len: usize) -> Result<SplitBundle, CliError> {
        Ok(build_splits(&self.log(), max_len)?)
    }
}
