//! Dataset construction, synthetic generators, and deterministic splits.

use anyhow::{Context, Result};
use chivi::model::{load_csv_dataset, Dataset};
use chivi::rng::{purpose, NoiseStream};
use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::config::{DataSource, SyntheticData, SyntheticKind};

/// A per-task seed derived from the run seed.
pub fn derived_seed(seed: u64, index: u64) -> u64 {
    NoiseStream::with_purpose(seed, purpose::SPLIT, index).rng(u64::MAX >> 16).next_u64()
}

pub fn load(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Csv { path, .. } => {
            let schema = source.csv_schema().expect("csv source");
            load_csv_dataset(path, &schema).with_context(|| format!("loading {}", path.display()))
        }
        DataSource::Synthetic(s) => Ok(synthetic(s)?),
    }
}

/// Draws a synthetic binary-classification dataset.
pub fn synthetic(s: &SyntheticData) -> chivi::Result<Dataset> {
    let mut rng = NoiseStream::with_purpose(s.seed, purpose::DATA, 0).rng(0);
    let f = s.features;
    let dir = 1.0 / (f as f64).sqrt();
    let mut rows = Vec::with_capacity(s.points);
    let mut labels = Vec::with_capacity(s.points);
    for i in 0..s.points {
        let mut x: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
        let y = match s.generator {
            SyntheticKind::Separable => {
                let t: f64 = x.iter().sum::<f64>() * dir;
                let y = if t >= 0.0 { 1.0 } else { -1.0 };
                for v in &mut x {
                    *v += y * s.margin * dir;
                }
                y
            }
            SyntheticKind::TwoClusters => {
                let y = if i % 2 == 0 { 1.0 } else { -1.0 };
                for v in &mut x {
                    *v += y * s.margin;
                }
                y
            }
        };
        rows.push(x);
        labels.push(y);
    }
    Dataset::new(rows, labels)
}

fn permutation(n: usize, seed: u64, index: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut NoiseStream::with_purpose(seed, purpose::SPLIT, index).rng(0));
    idx
}

fn has_both_classes(ds: &Dataset, idx: &[usize]) -> bool {
    let first = ds.label(idx[0]);
    idx.iter().any(|&i| ds.label(i) != first)
}

/// A random train/test split. A single-class training set is redrawn, up to
/// 100 times.
pub fn train_test_split(ds: &Dataset, train_fraction: f64, seed: u64, repeat: u64) -> (Vec<usize>, Vec<usize>) {
    let n = ds.len();
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    for attempt in 0..100u64 {
        let perm = permutation(n, seed, (repeat << 8) | attempt);
        let (train, test) = perm.split_at(n_train);
        if has_both_classes(ds, train) {
            return (train.to_vec(), test.to_vec());
        }
        warn!("split {repeat}: training set has a single class, resampling");
    }
    let perm = permutation(n, seed, repeat << 8);
    let (train, test) = perm.split_at(n_train);
    (train.to_vec(), test.to_vec())
}

/// Shuffled `k`-fold partition; fold sizes differ by at most one.
pub fn k_folds(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let perm = permutation(n, seed, u64::MAX >> 20);
    let mut folds = vec![Vec::new(); k];
    for (i, &p) in perm.iter().enumerate() {
        folds[i % k].push(p);
    }
    folds
}

/// Fraction of `predicted` that disagrees with `labels`.
pub fn error_rate(predicted: &[f64], labels: &[f64]) -> f64 {
    let wrong = predicted.iter().zip(labels).filter(|(p, y)| p != y).count();
    wrong as f64 / labels.len().max(1) as f64
}
