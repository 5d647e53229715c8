use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary-classification data: an `N×F` feature matrix and labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    n_features: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let n_features = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * n_features);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_features {
                return Err(Error::invalid(format!(
                    "row {i} has {} features, expected {n_features}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {i} contains non-finite value {v}")));
            }
            features.extend_from_slice(row);
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y != 1.0 && y != -1.0) {
            return Err(Error::invalid(format!("label {y} at row {i} is not -1 or +1")));
        }
        Ok(Self {
            features,
            labels,
            n_features,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            n_features: self.n_features,
        }
    }

    /// Column means and standard deviations of this dataset.
    pub fn fit_standardization(&self) -> Standardization {
        let n = self.len().max(1) as f64;
        let f = self.n_features;
        let mut means = vec![0.0; f];
        for i in 0..self.len() {
            for (m, x) in means.iter_mut().zip(self.row(i)) {
                *m += x / n;
            }
        }
        let mut sds = vec![0.0; f];
        for i in 0..self.len() {
            for ((s, x), m) in sds.iter_mut().zip(self.row(i)).zip(&means) {
                *s += (x - m).powi(2) / n;
            }
        }
        for s in &mut sds {
            *s = s.sqrt();
            // constant columns are centred but left unscaled
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Standardization { means, sds }
    }

    pub fn standardized(&self, st: &Standardization) -> Dataset {
        let mut out = self.clone();
        for row in out.features.chunks_mut(self.n_features.max(1)) {
            for ((x, m), s) in row.iter_mut().zip(&st.means).zip(&st.sds) {
                *x = (*x - m) / s;
            }
        }
        out
    }

    pub fn count_label(&self, y: f64) -> usize {
        self.labels.iter().filter(|&&l| l == y).count()
    }
}

/// Per-column affine map fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Which CSV columns hold the label and features, and how labels map to ±1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: String,
    /// `None` uses every column except the label.
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    pub label_map: BTreeMap<String, f64>,
}

/// Reads a headed CSV file into a [`Dataset`].
///
/// Errors carry the file line number of the offending record.
pub fn load_csv_dataset(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
            path: shown.clone(),
            row: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let label_idx = find(&schema.label_column)?;
    let feature_idx: Vec<usize> = match &schema.feature_columns {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != label_idx).collect(),
    };
    for (key, &v) in &schema.label_map {
        if v != 1.0 && v != -1.0 {
            return Err(Error::invalid(format!("label_map sends `{key}` to {v}; only ±1 allowed")));
        }
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse {
            path: shown.clone(),
            row: line,
            message,
        };
        let raw_label = record.get(label_idx).unwrap_or("").trim();
        let label = *schema
            .label_map
            .get(raw_label)
            .ok_or_else(|| err(format!("label `{raw_label}` is not in label_map")))?;
        let mut row = Vec::with_capacity(feature_idx.len());
        for &j in &feature_idx {
            let cell = record.get(j).unwrap_or("").trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| err(format!("column `{}`: `{cell}` is not a number", &headers[j])))?;
            if !v.is_finite() {
                return Err(err(format!("column `{}`: non-finite value `{cell}`", &headers[j])));
            }
            row.push(v);
        }
        rows.push(row);
        labels.push(label);
    }
    Dataset::new(rows, labels)
}
