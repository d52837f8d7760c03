//! Datasets: synthetic generation, CSV ingestion, standardization, splits
//! and mini-batching.
//!
//! Labels are stored as 1-based ids in `[1, L]`, matching what appears in
//! files; [`Dataset::class`] gives the zero-based index the network uses.

mod synthetic;
mod tabular;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::Instance;

pub use synthetic::{generate_synthetic, SynthSpec, SyntheticData};
pub use tabular::{load_csv, ColumnKind, ColumnSpec, EncodedRows, Encoder, Schema, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    num_labels: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    truth: Option<Vec<usize>>,
    feature_names: Vec<String>,
}

impl Dataset {
    /// `features` is row-major `N x dim`; labels and truth ids are 1-based.
    pub fn new(
        dim: usize,
        num_labels: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        truth: Option<Vec<usize>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("dataset dimension must be at least 1"));
        }
        check_dim("feature matrix", labels.len() * dim, features.len())?;
        if let Some(bad) = labels.iter().find(|&&y| y == 0 || y > num_labels) {
            return Err(Error::usage(format!(
                "label {bad} outside [1, {num_labels}]"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("dataset contains a non-finite feature"));
        }
        if let Some(truth) = &truth {
            check_dim("truth ids", labels.len(), truth.len())?;
        }
        Ok(Self {
            dim,
            num_labels,
            features,
            labels,
            truth,
            feature_names: (1..=dim).map(|d| format!("x{d}")).collect(),
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        check_dim("feature names", self.dim, names.len())?;
        self.feature_names = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.features[n * self.dim..(n + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// 1-based label id of row `n`.
    pub fn label(&self, n: usize) -> usize {
        self.labels[n]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Zero-based class index of row `n`.
    pub fn class(&self, n: usize) -> usize {
        self.labels[n] - 1
    }

    pub fn instance(&self, n: usize) -> Instance<'_> {
        Instance {
            x: self.row(n),
            class: self.class(n),
        }
    }

    pub fn truth(&self) -> Option<&[usize]> {
        self.truth.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &n in indices {
            features.extend_from_slice(self.row(n));
        }
        Dataset {
            dim: self.dim,
            num_labels: self.num_labels,
            features,
            labels: indices.iter().map(|&n| self.labels[n]).collect(),
            truth: self
                .truth
                .as_ref()
                .map(|t| indices.iter().map(|&n| t[n]).collect()),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Schema describing the file [`Dataset::write_csv`] produces.
    pub fn schema(&self) -> Schema {
        Schema {
            columns: self
                .feature_names
                .iter()
                .map(|name| ColumnSpec {
                    name: name.clone(),
                    kind: ColumnKind::Numeric,
                })
                .collect(),
            label: "label".to_string(),
            label_levels: Some((1..=self.num_labels).map(|l| l.to_string()).collect()),
        }
    }

    /// Header of feature names plus `label`; one row per instance.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|source| Error::Csv {
            context: format!("creating {}", path.display()),
            source,
        })?;
        let wrap = |source| Error::Csv {
            context: format!("writing {}", path.display()),
            source,
        };
        let mut header = self.feature_names.clone();
        header.push("label".to_string());
        writer.write_record(&header).map_err(wrap)?;
        let mut record = Vec::with_capacity(self.dim + 1);
        for n in 0..self.len() {
            record.clear();
            record.extend(self.row(n).iter().map(|v| v.to_string()));
            record.push(self.labels[n].to_string());
            writer.write_record(&record).map_err(wrap)?;
        }
        writer
            .flush()
            .map_err(|source| Error::io(path.to_path_buf(), source))
    }
}

/// Per-column affine transform fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations; zero-variance
    /// columns get scale 1.
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::usage("cannot standardize an empty dataset"));
        }
        let n = data.len() as f64;
        let mut mean = vec![0.0; data.dim];
        for i in 0..data.len() {
            for (m, v) in mean.iter_mut().zip(data.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; data.dim];
        for i in 0..data.len() {
            for ((s, v), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        check_dim("standardizer", self.mean.len(), data.dim)?;
        let mut out = data.clone();
        for row in out.features.chunks_mut(data.dim) {
            self.apply_row(row);
        }
        Ok(out)
    }
}

/// Fits on `train` and applies the same transform to every dataset in `others`.
pub fn standardize(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, Standardizer)> {
    let standardizer = Standardizer::fit(train)?;
    let train = standardizer.apply(train)?;
    let others = others
        .iter()
        .map(|d| standardizer.apply(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, others, standardizer))
}

/// Shuffles, then puts the first `ceil(fraction * N)` rows in the training part.
pub fn split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::usage(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut crate::rng::seeded(seed));
    let cut = ((fraction * data.len() as f64).ceil() as usize).min(data.len());
    Ok((data.subset(&order[..cut]), data.subset(&order[cut..])))
}

/// One epoch of shuffled contiguous mini-batches over `0..len`.
pub fn batches(len: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::usage("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut crate::rng::seeded(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
