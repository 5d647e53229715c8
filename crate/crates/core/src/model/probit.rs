use super::{Dataset, Model};
use crate::error::{Error, Result};
use crate::special::{d_log_ndtr, log_ndtr, normal_log_pdf};

/// Bayesian probit regression: `w ~ N(0, v I)`, `p(yᵢ | w) = Φ(yᵢ xᵢᵀ w)`.
#[derive(Debug, Clone)]
pub struct Probit {
    design: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    prior_var: f64,
    intercept: bool,
}

/// Builds the probit model; with `intercept` a constant column is prepended.
pub fn make_probit(dataset: &Dataset, prior_var: f64, intercept: bool) -> Result<Probit> {
    if dataset.is_empty() {
        return Err(Error::invalid("probit regression needs at least one data point"));
    }
    if !(prior_var > 0.0 && prior_var.is_finite()) {
        return Err(Error::invalid(format!("prior variance must be positive, got {prior_var}")));
    }
    let dim = dataset.n_features() + usize::from(intercept);
    if dim == 0 {
        return Err(Error::invalid("probit regression needs at least one feature"));
    }
    let mut design = Vec::with_capacity(dataset.len() * dim);
    for i in 0..dataset.len() {
        if intercept {
            design.push(1.0);
        }
        design.extend_from_slice(dataset.row(i));
    }
    Ok(Probit {
        design,
        labels: dataset.labels().to_vec(),
        dim,
        prior_var,
        intercept,
    })
}

impl Probit {
    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn design_row(&self, i: usize) -> &[f64] {
        &self.design[i * self.dim..(i + 1) * self.dim]
    }

    /// `yᵢ xᵢᵀ z`.
    pub fn margin(&self, i: usize, z: &[f64]) -> f64 {
        self.labels[i] * dot(self.design_row(i), z)
    }

    /// Maps raw features to the model's design row.
    pub fn design_for(&self, features: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.dim);
        if self.intercept {
            row.push(1.0);
        }
        row.extend_from_slice(features);
        row
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Model for Probit {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn data_count(&self) -> usize {
        self.labels.len()
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        z.iter().map(|&w| normal_log_pdf(w, 0.0, self.prior_var)).sum()
    }

    fn add_grad_log_prior(&self, z: &[f64], grad: &mut [f64]) {
        for (g, w) in grad.iter_mut().zip(z) {
            *g -= w / self.prior_var;
        }
    }

    fn log_lik_term(&self, i: usize, z: &[f64]) -> f64 {
        log_ndtr(self.margin(i, z))
    }

    fn add_grad_log_lik_term(&self, i: usize, z: &[f64], scale: f64, grad: &mut [f64]) {
        let coef = scale * self.labels[i] * d_log_ndtr(self.margin(i, z));
        for (g, x) in grad.iter_mut().zip(self.design_row(i)) {
            *g += coef * x;
        }
    }
}
