//! Monte Carlo CUBO and ELBO estimators.
//!
//! Both estimators work from a [`LogWeights`] sample, so a CUBO and an ELBO
//! computed from the same draws satisfy `elbo <= cubo` exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_joint, Model, Subsample};
use crate::rng::NoiseStream;
use crate::special::{mean_and_var, pairwise_sum, pairwise_sum_by};
use crate::variational::VariationalParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Cubo,
    Elbo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub kind: BoundKind,
    pub value: f64,
    /// CUBO order; 0 for the ELBO.
    pub order_n: f64,
    pub sample_count: usize,
    pub std_error: f64,
}

/// `log w⁽ˢ⁾ = log p(x, z⁽ˢ⁾) - log q(z⁽ˢ⁾)` for a batch of draws.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeights {
    pub values: Vec<f64>,
    pub z_draws: Vec<Vec<f64>>,
    pub max_log_w: f64,
}

impl LogWeights {
    /// Wraps precomputed log-weights (no draws attached).
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Vec::new())
    }

    fn new(values: Vec<f64>, z_draws: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("log-weights need at least one draw"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("log-weight of draw {i}"),
            });
        }
        let max_log_w = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            values,
            z_draws,
            max_log_w,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Adds `c` to every log-weight.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + c).collect(),
            z_draws: self.z_draws.clone(),
            max_log_w: self.max_log_w + c,
        }
    }
}

/// Draws `S` latents from `q` (draw `s` uses `stream.draw(s, D)`) and
/// evaluates their log-weights.
pub fn compute_log_weights(
    model: &dyn Model,
    params: &VariationalParams,
    samples: usize,
    subsample: Option<&Subsample>,
    stream: NoiseStream,
) -> Result<LogWeights> {
    if samples == 0 {
        return Err(Error::invalid("sample count S must be at least 1"));
    }
    let dim = params.dim();
    crate::error::check_dim(model.latent_dim(), dim)?;
    let draws: Vec<(f64, Vec<f64>)> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let z = params.reparam_sample(&stream.draw(s as u64, dim))?;
            let lw = log_joint(model, &z, subsample)? - params.log_q(&z)?;
            Ok((lw, z))
        })
        .collect::<Result<_>>()?;
    let (values, z_draws) = draws.into_iter().unzip();
    LogWeights::new(values, z_draws)
}

/// `w̃⁽ˢ⁾ = exp(log w⁽ˢ⁾ - max_s log w⁽ˢ⁾)`, each in `[0, 1]`.
pub fn stabilize(lw: &LogWeights) -> Vec<f64> {
    lw.values.iter().map(|v| (v - lw.max_log_w).exp()).collect()
}

/// Plug-in `CUBO_n = (1/n) log mean_s (w⁽ˢ⁾)ⁿ`, for `n > 1`.
///
/// The log of a sample mean is biased low for finite `S`; use it for
/// monitoring, not as an optimization objective.
pub fn cubo_estimate(lw: &LogWeights, n: f64) -> Result<BoundEstimate> {
    if !(n > 1.0) || !n.is_finite() {
        return Err(Error::invalid(format!(
            "CUBO order must be > 1 (got {n}); use elbo_estimate for the lower bound"
        )));
    }
    Ok(cubo_any_order(lw, n))
}

/// As [`cubo_estimate`] with no restriction on `n > 0`.
pub(crate) fn cubo_any_order(lw: &LogWeights, n: f64) -> BoundEstimate {
    let s = lw.len();
    let scaled: Vec<f64> = lw
        .values
        .iter()
        .map(|v| (n * (v - lw.max_log_w)).exp())
        .collect();
    let mean = pairwise_sum(&scaled) / s as f64;
    let value = lw.max_log_w + mean.ln() / n;
    let std_error = if s > 1 {
        let (_, var) = mean_and_var(&scaled);
        (var / s as f64).sqrt() / (n * mean)
    } else {
        0.0
    };
    BoundEstimate {
        kind: BoundKind::Cubo,
        value,
        order_n: n,
        sample_count: s,
        std_error,
    }
}

/// `ELBO = mean_s log w⁽ˢ⁾`, with standard error `sd/√S`.
pub fn elbo_estimate(lw: &LogWeights) -> BoundEstimate {
    let s = lw.len();
    let value = pairwise_sum(&lw.values) / s as f64;
    let std_error = if s > 1 {
        (mean_and_var(&lw.values).1 / s as f64).sqrt()
    } else {
        0.0
    };
    BoundEstimate {
        kind: BoundKind::Elbo,
        value,
        order_n: 0.0,
        sample_count: s,
        std_error,
    }
}

/// Truncated Taylor expansion of an f-divergence around `t = 1`:
/// `Σ_{i=2..k} f⁽ⁱ⁾(1)/i! · m_i`.
///
/// `moments[j]` and `f_derivs_at_1[j]` belong to order `i = j + 2`; the
/// moments are the central ones `m_i = E_q[(p/q - 1)ⁱ]`.
pub fn f_divergence_taylor(moments: &[f64], f_derivs_at_1: &[f64]) -> Result<f64> {
    crate::error::check_dim(moments.len(), f_derivs_at_1.len())?;
    if moments.is_empty() {
        return Err(Error::invalid("Taylor expansion needs at least the order-2 term"));
    }
    let mut factorial = 1.0;
    let terms: Vec<f64> = moments
        .iter()
        .zip(f_derivs_at_1)
        .enumerate()
        .map(|(j, (m, d))| {
            let i = (j + 2) as f64;
            factorial *= i;
            d / factorial * m
        })
        .collect();
    Ok(pairwise_sum_by(terms.len(), |j| terms[j]))
}
