use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{DataError, ItemCatalog, PAD};

/// Users with fewer interactions cannot supply a training, validation and
/// test interaction and are dropped at load time.
pub const MIN_INTERACTIONS: usize = 3;

/// One user's time-ordered interactions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    pub user_id: u64,
    pub items: Vec<usize>,
    pub timestamps: Vec<i64>,
}

impl UserHistory {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct interacted items, sorted.
    pub fn item_set(&self) -> Vec<usize> {
        let mut set = self.items.clone();
        set.sort_unstable();
        set.dedup();
        set
    }
}

/// Interaction log grouped by user (ascending user id), each user's records
/// sorted by timestamp. Ties keep file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    users: Vec<UserHistory>,
}

impl InteractionLog {
    /// Groups and sorts raw `(user, item, timestamp)` records. No filtering.
    pub fn from_records(records: impl IntoIterator<Item = (u64, usize, i64)>) -> Self {
        let mut grouped: BTreeMap<u64, Vec<(i64, usize)>> = BTreeMap::new();
        for (user, item, ts) in records {
            grouped.entry(user).or_default().push((ts, item));
        }
        let users = grouped
            .into_iter()
            .map(|(user_id, mut recs)| {
                recs.sort_by_key(|(ts, _)| *ts);
                UserHistory { user_id, items: recs.iter().map(|r| r.1).collect(), timestamps: recs.iter().map(|r| r.0).collect() }
            })
            .collect();
        Self { users }
    }

    pub fn users(&self) -> &[UserHistory] {
        &self.users
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn interaction_count(&self) -> usize {
        self.users.iter().map(UserHistory::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Largest referenced item id.
    pub fn max_item(&self) -> usize {
        self.users.iter().flat_map(|u| u.items.iter().copied()).max().unwrap_or(0)
    }

    pub fn distinct_items(&self) -> usize {
        let mut all: Vec<usize> = self.users.iter().flat_map(|u| u.items.iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    }

    /// Drops users with fewer than `min` interactions.
    pub fn retain_min_interactions(&mut self, min: usize) {
        self.users.retain(|u| u.len() >= min);
    }

    /// Iterates `(user_id, item, timestamp)` in storage order.
    pub fn records(&self) -> impl Iterator<Item = (u64, usize, i64)> + '_ {
        self.users.iter().flat_map(|u| u.items.iter().zip(&u.timestamps).map(move |(&i, &t)| (u.user_id, i, t)))
    }
}

/// Reads a `user_id<TAB>item_id<TAB>unix_timestamp` file, validates item ids
/// against `catalog` when given, and drops users below [`MIN_INTERACTIONS`].
pub fn load_interactions(path: &Path, catalog: Option<&ItemCatalog>) -> Result<InteractionLog, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    parse_interactions(&text, &path.display().to_string(), catalog)
}

pub fn parse_interactions(text: &str, source_name: &str, catalog: Option<&ItemCatalog>) -> Result<InteractionLog, DataError> {
    let parse_err = |line: usize, message: String| DataError::Parse { source_name: source_name.to_string(), line, message };
    let mut records = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(line_no, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let user: u64 = fields[0].trim().parse().map_err(|_| parse_err(line_no, format!("bad user id {:?}", fields[0])))?;
        let item: usize = fields[1].trim().parse().map_err(|_| parse_err(line_no, format!("bad item id {:?}", fields[1])))?;
        let ts: i64 = fields[2].trim().parse().map_err(|_| parse_err(line_no, format!("bad timestamp {:?}", fields[2])))?;
        if item == PAD {
            return Err(parse_err(line_no, "item ids start at 1".into()));
        }
        if ts < 0 {
            return Err(parse_err(line_no, format!("negative timestamp {ts}")));
        }
        if let Some(cat) = catalog {
            if !cat.contains(item) {
                return Err(DataError::UnknownItem { source_name: source_name.to_string(), line: line_no, item, item_count: cat.item_count() });
            }
        }
        records.push((user, item, ts));
    }
    let mut log = InteractionLog::from_records(records);
    log.retain_min_interactions(MIN_INTERACTIONS);
    Ok(log)
}
