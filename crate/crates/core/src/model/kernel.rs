use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-exponential kernel `σ² exp(-‖a - b‖² / (2φ²))` plus diagonal jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscale: f64,
    /// Absolute jitter; `None` means `1e-6 · σ²`.
    #[serde(default)]
    pub jitter: Option<f64>,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscale: f64) -> Result<Self> {
        let k = Self {
            signal_variance,
            lengthscale,
            jitter: None,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::invalid(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::invalid(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if let Some(j) = self.jitter {
            if !(j >= 0.0 && j.is_finite()) {
                return Err(Error::invalid(format!("jitter must be non-negative, got {j}")));
            }
        }
        Ok(())
    }

    pub fn base_jitter(&self) -> f64 {
        self.jitter.unwrap_or(1e-6 * self.signal_variance)
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        squared_exponential(a, b, self.signal_variance, self.lengthscale)
    }
}

pub fn squared_exponential(a: &[f64], b: &[f64], signal_variance: f64, lengthscale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    signal_variance * (-d2 / (2.0 * lengthscale * lengthscale)).exp()
}

/// Gram matrix of `points` plus a Cholesky factor, escalating jitter on failure.
///
/// The jitter starts at `kernel.base_jitter()` and is doubled up to three
/// times before giving up.
pub(crate) fn factorized_gram(
    points: &[Vec<f64>],
    kernel: &KernelParams,
) -> Result<(nalgebra::DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    kernel.validate()?;
    let n = points.len();
    let gram = nalgebra::DMatrix::from_fn(n, n, |i, j| kernel.eval(&points[i], &points[j]));
    let mut jitter = kernel.base_jitter();
    for attempt in 0..4 {
        if attempt > 0 {
            jitter *= 2.0;
        }
        let mut k = gram.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = k.clone().cholesky() {
            let l = chol.l_dirty();
            if (0..n).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
                return Ok((k, chol, jitter));
            }
        }
        log::debug!("Cholesky failed with jitter {jitter:e}");
    }
    Err(Error::Factorization { jitter })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_equals_signal_variance() {
        let k = KernelParams::new(2.5, 0.7).unwrap();
        assert_eq!(k.eval(&[1.0, 2.0], &[1.0, 2.0]), 2.5);
    }

    #[test]
    fn identical_points_need_jitter() {
        let pts = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
        let mut k = KernelParams::new(1.0, 1.0).unwrap();
        let (gram, _, jitter) = factorized_gram(&pts, &k).unwrap();
        assert_eq!(gram[(0, 1)], 1.0);
        assert!(jitter > 0.0);
        k.jitter = Some(0.0);
        assert!(matches!(factorized_gram(&pts, &k), Err(Error::Factorization { .. })));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(KernelParams::new(0.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, -1.0).is_err());
        let k = KernelParams {
            signal_variance: 1.0,
            lengthscale: 1.0,
            jitter: Some(-1.0),
        };
        assert!(k.validate().is_err());
    }
}
