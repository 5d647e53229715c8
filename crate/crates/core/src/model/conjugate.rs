use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::special::{normal_log_pdf, LN_2PI};

/// Diagonal Gaussian posterior in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianPosterior {
    pub fn sd(&self) -> Vec<f64> {
        self.var.iter().map(|v| v.sqrt()).collect()
    }
}

/// `z ~ N(m₀, diag(v₀))`, `xᵢ | z ~ N(z, σ²I)`.
///
/// The evidence and posterior are available exactly, which makes this the
/// reference fixture for every bound and optimizer test.
#[derive(Debug, Clone)]
pub struct ConjugateGaussian {
    prior_mean: Vec<f64>,
    prior_var: Vec<f64>,
    noise_var: f64,
    data: Vec<Vec<f64>>,
    posterior: GaussianPosterior,
    log_evidence: f64,
}

pub fn make_conjugate_gaussian(
    prior_mean: Vec<f64>,
    prior_var: Vec<f64>,
    noise_var: f64,
    data: Vec<Vec<f64>>,
) -> Result<ConjugateGaussian> {
    let d = prior_mean.len();
    if d == 0 {
        return Err(Error::invalid("latent dimension must be positive"));
    }
    if prior_var.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: prior_var.len(),
        });
    }
    if prior_var.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("prior variances must be positive"));
    }
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    if let Some(row) = data.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: row.len(),
        });
    }
    if data.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("data must be finite"));
    }

    let n = data.len() as f64;
    let mut post_mean = Vec::with_capacity(d);
    let mut post_var = Vec::with_capacity(d);
    let mut log_evidence = 0.0;
    for k in 0..d {
        let sum: f64 = data.iter().map(|r| r[k]).sum();
        let precision = 1.0 / prior_var[k] + n / noise_var;
        let var = 1.0 / precision;
        post_var.push(var);
        post_mean.push(var * (prior_mean[k] / prior_var[k] + sum / noise_var));

        // x_{·k} ~ N(m₀ 1, σ² I + v₀ 1 1ᵀ); matrix-determinant and Sherman-Morrison
        if !data.is_empty() {
            let resid: Vec<f64> = data.iter().map(|r| r[k] - prior_mean[k]).collect();
            let rs: f64 = resid.iter().sum();
            let rr: f64 = resid.iter().map(|r| r * r).sum();
            let denom = noise_var + n * prior_var[k];
            let quad = (rr - prior_var[k] * rs * rs / denom) / noise_var;
            let logdet = (n - 1.0) * noise_var.ln() + denom.ln();
            log_evidence += -0.5 * (n * LN_2PI + logdet + quad);
        }
    }
    Ok(ConjugateGaussian {
        prior_mean,
        prior_var,
        noise_var,
        data,
        posterior: GaussianPosterior {
            mean: post_mean,
            var: post_var,
        },
        log_evidence,
    })
}

impl ConjugateGaussian {
    pub fn posterior(&self) -> &GaussianPosterior {
        &self.posterior
    }

    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }
}

impl Model for ConjugateGaussian {
    fn latent_dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn data_count(&self) -> usize {
        self.data.len()
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(&self.prior_mean)
            .zip(&self.prior_var)
            .map(|((&z, &m), &v)| normal_log_pdf(z, m, v))
            .sum()
    }

    fn add_grad_log_prior(&self, z: &[f64], grad: &mut [f64]) {
        for (((g, &z), &m), &v) in grad.iter_mut().zip(z).zip(&self.prior_mean).zip(&self.prior_var) {
            *g -= (z - m) / v;
        }
    }

    fn log_lik_term(&self, i: usize, z: &[f64]) -> f64 {
        self.data[i]
            .iter()
            .zip(z)
            .map(|(&x, &z)| normal_log_pdf(x, z, self.noise_var))
            .sum()
    }

    fn add_grad_log_lik_term(&self, i: usize, z: &[f64], scale: f64, grad: &mut [f64]) {
        for ((g, &x), &z) in grad.iter_mut().zip(&self.data[i]).zip(z) {
            *g += scale * (x - z) / self.noise_var;
        }
    }
}
