use std::fs;
use std::path::Path;

use super::{DataError, PAD};
use crate::numerics::Matrix;

/// Item universe `1..=item_count` with one dense attribute row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCatalog {
    item_count: usize,
    attributes: Matrix,
}

impl ItemCatalog {
    /// `attributes` row `i - 1` belongs to item `i`.
    pub fn new(attributes: Matrix) -> Result<Self, DataError> {
        if !attributes.is_finite() {
            return Err(DataError::Invalid("attribute values must be finite".into()));
        }
        Ok(Self { item_count: attributes.rows(), attributes })
    }

    /// Catalog with zero-width attributes.
    pub fn without_attributes(item_count: usize) -> Self {
        Self { item_count, attributes: Matrix::zeros(item_count, 0) }
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn attributes(&self) -> &Matrix {
        &self.attributes
    }

    pub fn contains(&self, item: usize) -> bool {
        item != PAD && item <= self.item_count
    }

    /// Same items, attributes dropped.
    pub fn strip_attributes(&self) -> Self {
        Self::without_attributes(self.item_count)
    }

    /// Attribute rows for `items`; padding yields a zero row.
    pub fn attribute_rows(&self, items: &[usize]) -> Result<Matrix, DataError> {
        let idx = items
            .iter()
            .map(|&i| {
                if i == PAD {
                    Ok(None)
                } else if i <= self.item_count {
                    Ok(Some(i - 1))
                } else {
                    Err(DataError::MissingAttributes { item: i })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.attributes.gather_rows(&idx).map_err(|e| DataError::Invalid(e.to_string()))
    }
}

/// Reads `item_id<TAB>v1,v2,...,vj` lines. Every id in `1..=max id` must be
/// present exactly once and all rows must share the same width.
pub fn load_attributes(path: &Path) -> Result<ItemCatalog, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    parse_attributes(&text, &path.display().to_string())
}

pub(crate) fn parse_attributes(text: &str, source_name: &str) -> Result<ItemCatalog, DataError> {
    let parse_err = |line: usize, message: String| DataError::Parse { source_name: source_name.to_string(), line, message };
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut width = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, values) = line.split_once('\t').ok_or_else(|| parse_err(line_no, "expected item_id<TAB>values".into()))?;
        let id: usize = id.trim().parse().map_err(|_| parse_err(line_no, format!("bad item id {id:?}")))?;
        if id == PAD {
            return Err(parse_err(line_no, "item ids start at 1".into()));
        }
        let values = values
            .split(',')
            .map(|v| {
                let x: f64 = v.trim().parse().map_err(|_| parse_err(line_no, format!("bad attribute value {v:?}")))?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(parse_err(line_no, format!("non-finite attribute value {v:?}")))
                }
            })
            .collect::<Result<Vec<f64>, _>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_err(line_no, format!("expected {w} attribute values, found {}", values.len())));
            }
            _ => {}
        }
        rows.push((id, values));
    }
    let width = width.unwrap_or(0);
    let item_count = rows.iter().map(|(id, _)| *id).max().unwrap_or(0);
    let mut attributes = Matrix::zeros(item_count, width);
    let mut seen = vec![false; item_count];
    for (id, values) in rows {
        if seen[id - 1] {
            return Err(DataError::Invalid(format!("{source_name}: duplicate attribute row for item {id}")));
        }
        seen[id - 1] = true;
        attributes.row_mut(id - 1).copy_from_slice(&values);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(DataError::MissingAttributes { item: missing + 1 });
    }
    ItemCatalog::new(attributes)
}
