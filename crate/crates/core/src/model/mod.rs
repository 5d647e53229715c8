//! Probabilistic models: the log-joint contract and the built-in models.
//!
//! A [`Model`] splits its log-joint into a prior term and `N` per-datum
//! likelihood terms so that a minibatch estimate
//!
//! ```text
//! log p(z) + (N/M) Σ_{j ∈ subsample} log p(x_j | z)
//! ```
//!
//! can be formed without the model knowing anything about subsampling.

mod conjugate;
mod cox;
mod dataset;
mod gp;
mod kernel;
mod probit;

pub use conjugate::{make_conjugate_gaussian, ConjugateGaussian, GaussianPosterior};
pub use cox::{load_shot_events, make_cox_process, CoxGrid, CoxProcess, ShotEvent};
pub use dataset::{load_csv_dataset, CsvSchema, Dataset, Standardization};
pub use gp::{make_gp_classification, GpClassification, DEFAULT_MAX_GP_POINTS};
pub use kernel::{squared_exponential, KernelParams};
pub use probit::{make_probit, Probit};

use crate::error::{check_dim, Error, Result};

/// A differentiable log-joint `log p(x, z)` over a real latent `z ∈ ℝᴰ`.
///
/// Implementations must be safe to evaluate from several threads at once.
pub trait Model: Send + Sync {
    fn latent_dim(&self) -> usize;

    /// Number of likelihood terms `N`.
    fn data_count(&self) -> usize;

    fn log_prior(&self, z: &[f64]) -> f64;

    /// Adds `∇_z log p(z)` to `grad`.
    fn add_grad_log_prior(&self, z: &[f64], grad: &mut [f64]);

    fn log_lik_term(&self, i: usize, z: &[f64]) -> f64;

    /// Adds `scale · ∇_z log p(x_i | z)` to `grad`.
    fn add_grad_log_lik_term(&self, i: usize, z: &[f64], scale: f64, grad: &mut [f64]);

    /// Rejects latent values outside the region the model can evaluate safely.
    fn check_support(&self, _z: &[f64]) -> Result<()> {
        Ok(())
    }
}

/// A validated set of data indices used for the average-likelihood estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsample {
    indices: Vec<usize>,
    data_count: usize,
}

impl Subsample {
    pub fn new(mut indices: Vec<usize>, data_count: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySubsample);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= data_count) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: data_count,
            });
        }
        // sorted order makes a full subsample sum exactly like the full data
        indices.sort_unstable();
        Ok(Self {
            indices,
            data_count,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `N / M`.
    pub fn scale(&self) -> f64 {
        self.data_count as f64 / self.indices.len() as f64
    }
}

fn check_subsample(model: &dyn Model, subsample: Option<&Subsample>) -> Result<()> {
    if let Some(s) = subsample {
        if s.data_count != model.data_count() {
            return Err(Error::invalid(format!(
                "subsample built for {} data points, model has {}",
                s.data_count,
                model.data_count()
            )));
        }
    }
    Ok(())
}

/// `log p(z) + Σ log p(xᵢ | z)`, or its `N/M`-scaled minibatch estimate.
pub fn log_joint(model: &dyn Model, z: &[f64], subsample: Option<&Subsample>) -> Result<f64> {
    check_dim(model.latent_dim(), z.len())?;
    check_subsample(model, subsample)?;
    model.check_support(z)?;
    let lik = match subsample {
        None => (0..model.data_count()).map(|i| model.log_lik_term(i, z)).sum::<f64>(),
        Some(s) => {
            let sum: f64 = s.indices().iter().map(|&i| model.log_lik_term(i, z)).sum();
            if s.len() == model.data_count() {
                sum
            } else {
                s.scale() * sum
            }
        }
    };
    let value = model.log_prior(z) + lik;
    if value.is_nan() {
        return Err(Error::NonFinite {
            context: "log_joint".into(),
        });
    }
    Ok(value)
}

/// Gradient of [`log_joint`] with respect to `z`.
pub fn grad_log_joint(
    model: &dyn Model,
    z: &[f64],
    subsample: Option<&Subsample>,
) -> Result<Vec<f64>> {
    check_dim(model.latent_dim(), z.len())?;
    check_subsample(model, subsample)?;
    model.check_support(z)?;
    let mut grad = vec![0.0; z.len()];
    model.add_grad_log_prior(z, &mut grad);
    match subsample {
        None => {
            for i in 0..model.data_count() {
                model.add_grad_log_lik_term(i, z, 1.0, &mut grad);
            }
        }
        Some(s) => {
            let scale = if s.len() == model.data_count() {
                1.0
            } else {
                s.scale()
            };
            for &i in s.indices() {
                model.add_grad_log_lik_term(i, z, scale, &mut grad);
            }
        }
    }
    Ok(grad)
}

/// Both [`log_joint`] and its gradient.
pub fn log_joint_and_grad(
    model: &dyn Model,
    z: &[f64],
    subsample: Option<&Subsample>,
) -> Result<(f64, Vec<f64>)> {
    Ok((
        log_joint(model, z, subsample)?,
        grad_log_joint(model, z, subsample)?,
    ))
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Central finite differences of `log_joint`, relative step `h`.
    pub fn fd_grad(model: &dyn Model, z: &[f64], h: f64) -> Vec<f64> {
        (0..z.len())
            .map(|k| {
                let step = h * z[k].abs().max(1.0);
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[k] += step;
                zm[k] -= step;
                (log_joint(model, &zp, None).unwrap() - log_joint(model, &zm, None).unwrap())
                    / (2.0 * step)
            })
            .collect()
    }

    pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        diff / scale.max(1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_probit() -> Probit {
        let ds = Dataset::new(vec![vec![1.0, 0.5], vec![-0.3, 2.0]], vec![1.0, -1.0]).unwrap();
        make_probit(&ds, 2.0, false).unwrap()
    }

    #[test]
    fn subsample_validation() {
        assert!(matches!(Subsample::new(vec![], 3), Err(Error::EmptySubsample)));
        assert!(matches!(
            Subsample::new(vec![0, 3], 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
        assert_eq!(Subsample::new(vec![2, 0], 4).unwrap().indices(), &[0, 2]);
    }

    #[test]
    fn full_subsample_equals_full_log_joint() {
        let m = toy_probit();
        let z = [0.3, -0.7];
        let s = Subsample::new(vec![1, 0], 2).unwrap();
        assert_eq!(log_joint(&m, &z, Some(&s)).unwrap(), log_joint(&m, &z, None).unwrap());
        assert_eq!(
            grad_log_joint(&m, &z, Some(&s)).unwrap(),
            grad_log_joint(&m, &z, None).unwrap()
        );
    }

    #[test]
    fn half_subsample_doubles_the_term() {
        let m = toy_probit();
        let z = [0.3, -0.7];
        let s = Subsample::new(vec![0], 2).unwrap();
        let want = m.log_prior(&z) + 2.0 * m.log_lik_term(0, &z);
        assert_eq!(log_joint(&m, &z, Some(&s)).unwrap(), want);
    }

    #[test]
    fn subsample_for_wrong_model_rejected() {
        let m = toy_probit();
        let s = Subsample::new(vec![0], 5).unwrap();
        assert!(log_joint(&m, &[0.0, 0.0], Some(&s)).is_err());
        assert!(matches!(
            log_joint(&m, &[0.0], None),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    /// Uniform subsampling is unbiased: averaging over every size-M subset
    /// recovers the full log-joint.
    #[test]
    fn subsample_estimate_is_unbiased_by_enumeration() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()])
            .collect();
        let labels = vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let m = make_probit(&Dataset::new(rows, labels).unwrap(), 1.5, false).unwrap();
        let z = [0.4, -1.1];
        let full = log_joint(&m, &z, None).unwrap();
        for size in 1..=6usize {
            let mut total = 0.0;
            let mut count = 0usize;
            for mask in 0u32..64 {
                if mask.count_ones() as usize != size {
                    continue;
                }
                let idx: Vec<usize> = (0..6).filter(|b| mask & (1 << b) != 0).collect();
                total += log_joint(&m, &z, Some(&Subsample::new(idx, 6).unwrap())).unwrap();
                count += 1;
            }
            assert!((total / count as f64 - full).abs() < 1e-12, "M = {size}");
        }
    }
}
