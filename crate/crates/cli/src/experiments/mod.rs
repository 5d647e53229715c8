//! The experiments behind `chivi run`.

pub mod cox;
pub mod gp;
pub mod probit;
pub mod property;
pub mod sandwich;

use std::path::Path;

use anyhow::Result;
use chivi::special::ndtr;
use chivi::{OptimizerConfig, SandwichTrace, VariationalParams};

/// Optimizer settings for one fit: the configured ones with `seed`.
pub fn with_seed(base: &OptimizerConfig, seed: u64) -> OptimizerConfig {
    OptimizerConfig { seed, ..base.clone() }
}

/// One fit's trace, tagged for the long-format `trace.csv`.
pub struct TaggedTrace<'a> {
    pub method: &'a str,
    pub repeat: usize,
    pub trace: &'a SandwichTrace,
}

/// Writes traces of several fits as one CSV with `method` and `repeat` columns.
pub fn write_long_trace(path: &Path, traces: &[TaggedTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method", "repeat", "iteration", "elbo", "cubo", "n", "S", "elbo_se", "cubo_se", "grad_norm",
        "log_scale_correction", "wall_ms",
    ])?;
    for t in traces {
        for r in &t.trace.rows {
            w.write_record([
                t.method.to_string(),
                t.repeat.to_string(),
                r.iteration.to_string(),
                r.elbo.to_string(),
                r.cubo.to_string(),
                r.n.to_string(),
                r.samples.to_string(),
                r.elbo_se.to_string(),
                r.cubo_se.to_string(),
                r.grad_norm.to_string(),
                r.log_scale_correction.to_string(),
                r.wall_ms.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns `Lᵀ` of the variational scale, one row per latent dimension, so
/// that `dᵀ Σ d = Σ_j (row_j · d)²`.
pub fn scale_rows(q: &VariationalParams) -> Result<Vec<Vec<f64>>> {
    let d = q.dim();
    let zero = q.transform(&vec![0.0; d])?;
    (0..d)
        .map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let col = q.transform(&e)?;
            Ok(col.iter().zip(&zero).map(|(a, b)| a - b).collect())
        })
        .collect()
}

/// `Φ(m / √(1 + v))`: the probit likelihood integrated against `N(m, v)`.
pub fn probit_predictive(mean: f64, var: f64) -> f64 {
    ndtr(mean / (1.0 + var).sqrt())
}

/// `±1` at threshold 1/2.
pub fn label_from_probability(p: f64) -> f64 {
    if p >= 0.5 {
        1.0
    } else {
        -1.0
    }
}

/// Mean absolute difference.
pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}
