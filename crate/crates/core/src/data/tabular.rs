use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column typing for a CSV file.
///
/// `label_levels` fixes the label id order (id = position + 1); without it
/// labels are numbered in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_levels: Option<Vec<String>>,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(path.display().to_string(), format!("cannot read schema: {e}"))
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            context: format!("schema {}", path.display()),
            source,
        })
    }

    fn feature_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(move |c| c.name != self.label)
    }
}

/// Raw string cells of a CSV file with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let context = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|source| Error::Csv {
                context: context.clone(),
                source,
            })?;
        let headers = reader
            .headers()
            .map_err(|source| Error::Csv {
                context: context.clone(),
                source,
            })?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|source| Error::Csv {
                context: context.clone(),
                source,
            })?;
            rows.push(record.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(Self {
            path: context,
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::config(name, format!("column not found in {}", self.path)))
    }

    /// Non-empty cell, or an error naming the 1-based data row and column.
    fn cell(&self, row: usize, col: usize) -> Result<&str> {
        let value = self.rows[row].get(col).map(String::as_str).unwrap_or("");
        if value.is_empty() {
            return Err(self.parse_error(row, col, "missing value"));
        }
        Ok(value)
    }

    fn parse_error(&self, row: usize, col: usize, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            row: row + 1,
            column: self.headers[col].clone(),
            reason: reason.into(),
        }
    }
}

/// Fitted mapping from raw CSV cells to feature vectors and label ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Encoder {
    pub schema: Schema,
    /// Levels of each categorical feature column, in first-appearance order.
    pub categories: BTreeMap<String, Vec<String>>,
    pub label_levels: Vec<String>,
    pub feature_names: Vec<String>,
}

/// Encoded rows; `labels` is present when the label column was in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRows {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Option<Vec<usize>>,
}

impl EncodedRows {
    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.features[n * self.dim..(n + 1) * self.dim]
    }
}

impl Encoder {
    pub fn fit(table: &Table, schema: &Schema) -> Result<Self> {
        let mut categories = BTreeMap::new();
        let mut feature_names = Vec::new();
        for spec in schema.feature_columns() {
            let col = table.column(&spec.name)?;
            match spec.kind {
                ColumnKind::Numeric => feature_names.push(spec.name.clone()),
                ColumnKind::Categorical => {
                    let mut levels: Vec<String> = Vec::new();
                    for row in 0..table.rows.len() {
                        let value = table.cell(row, col)?;
                        if !levels.iter().any(|l| l == value) {
                            levels.push(value.to_string());
                        }
                    }
                    feature_names.extend(levels.iter().map(|l| format!("{}={l}", spec.name)));
                    categories.insert(spec.name.clone(), levels);
                }
            }
        }
        if feature_names.is_empty() {
            return Err(Error::config("columns", "schema declares no feature columns"));
        }

        let label_col = table.column(&schema.label)?;
        let label_levels = match &schema.label_levels {
            Some(levels) => levels.clone(),
            None => {
                let mut levels: Vec<String> = Vec::new();
                for row in 0..table.rows.len() {
                    let value = table.cell(row, label_col)?;
                    if !levels.iter().any(|l| l == value) {
                        levels.push(value.to_string());
                    }
                }
                levels
            }
        };
        Ok(Self {
            schema: schema.clone(),
            categories,
            label_levels,
            feature_names,
        })
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Encodes every row. The label column is optional unless `require_label`.
    pub fn encode(&self, table: &Table, require_label: bool) -> Result<EncodedRows> {
        let mut columns = Vec::new();
        for spec in self.schema.feature_columns() {
            columns.push((table.column(&spec.name)?, spec));
        }
        let label_col = match table.column(&self.schema.label) {
            Ok(col) => Some(col),
            Err(e) if require_label => return Err(e),
            Err(_) => None,
        };

        let mut features = Vec::with_capacity(table.rows.len() * self.dim());
        let mut labels = label_col.map(|_| Vec::with_capacity(table.rows.len()));
        for row in 0..table.rows.len() {
            for &(col, spec) in &columns {
                let value = table.cell(row, col)?;
                match spec.kind {
                    ColumnKind::Numeric => {
                        let v: f64 = value
                            .parse()
                            .map_err(|_| table.parse_error(row, col, format!("not a number: '{value}'")))?;
                        if !v.is_finite() {
                            return Err(table.parse_error(row, col, "non-finite value"));
                        }
                        features.push(v);
                    }
                    ColumnKind::Categorical => {
                        let levels = &self.categories[&spec.name];
                        let hot = levels.iter().position(|l| l == value).ok_or_else(|| {
                            table.parse_error(row, col, format!("unseen category '{value}'"))
                        })?;
                        features.extend((0..levels.len()).map(|i| if i == hot { 1.0 } else { 0.0 }));
                    }
                }
            }
            if let (Some(col), Some(labels)) = (label_col, labels.as_mut()) {
                let value = table.cell(row, col)?;
                let id = self
                    .label_id(value)
                    .ok_or_else(|| table.parse_error(row, col, format!("unseen label '{value}'")))?;
                labels.push(id);
            }
        }
        Ok(EncodedRows {
            dim: self.dim(),
            features,
            labels,
        })
    }

    /// 1-based id of a raw label value.
    pub fn label_id(&self, value: &str) -> Option<usize> {
        self.label_levels.iter().position(|l| l == value).map(|i| i + 1)
    }

    /// Raw label value of a 1-based id.
    pub fn label_name(&self, id: usize) -> Option<&str> {
        self.label_levels.get(id.checked_sub(1)?).map(String::as_str)
    }
}

/// Reads `path` under `schema`, expanding categorical columns one-hot and
/// numbering labels; returns the dataset and the fitted encoder.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<(Dataset, Encoder)> {
    let table = Table::read(path)?;
    let encoder = Encoder::fit(&table, schema)?;
    let rows = encoder.encode(&table, true)?;
    let labels = rows.labels.expect("label column is required");
    let dataset = Dataset::new(rows.dim, encoder.label_levels.len(), rows.features, labels, None)?
        .with_feature_names(encoder.feature_names.clone())?;
    Ok((dataset, encoder))
}
