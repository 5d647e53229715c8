use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::factorized_gram;
use super::{Dataset, KernelParams, Model};
use crate::error::{Error, Result};
use crate::special::{d_log_ndtr, log_ndtr, LN_2PI};

/// Dense-GP size cap; larger problems need an inducing-point method.
pub const DEFAULT_MAX_GP_POINTS: usize = 2000;

/// GP classification: `f ~ N(0, K + jitter·I)`, `p(yᵢ | f) = Φ(yᵢ fᵢ)`.
///
/// The latent is the vector of function values at the training inputs.
#[derive(Debug, Clone)]
pub struct GpClassification {
    inputs: Vec<Vec<f64>>,
    labels: Vec<f64>,
    kernel: KernelParams,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    jitter: f64,
}

pub fn make_gp_classification(dataset: &Dataset, kernel: KernelParams) -> Result<GpClassification> {
    make_gp_classification_capped(dataset, kernel, DEFAULT_MAX_GP_POINTS)
}

pub fn make_gp_classification_capped(
    dataset: &Dataset,
    kernel: KernelParams,
    max_points: usize,
) -> Result<GpClassification> {
    if dataset.is_empty() {
        return Err(Error::invalid("GP classification needs at least one data point"));
    }
    if dataset.len() > max_points {
        return Err(Error::invalid(format!(
            "{} points exceeds the dense GP limit of {max_points}",
            dataset.len()
        )));
    }
    let inputs: Vec<Vec<f64>> = (0..dataset.len()).map(|i| dataset.row(i).to_vec()).collect();
    let (_, chol, jitter) = factorized_gram(&inputs, &kernel)?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(GpClassification {
        inputs,
        labels: dataset.labels().to_vec(),
        kernel,
        chol,
        log_det,
        jitter,
    })
}

impl GpClassification {
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    /// Solves `L a = f` for the cached lower factor.
    fn whiten(&self, f: &[f64]) -> DVector<f64> {
        let mut a = DVector::from_column_slice(f);
        self.chol.l_dirty().solve_lower_triangular_mut(&mut a);
        a
    }

    /// `K⁻¹ f`.
    pub fn solve(&self, f: &[f64]) -> DVector<f64> {
        self.chol.solve(&DVector::from_column_slice(f))
    }

    /// Predictive latent mean and variance at new inputs under a Gaussian
    /// `q(f) = N(mean, diag(var))` on the training latents.
    pub fn predict_latent(&self, test_inputs: &[Vec<f64>], mean: &[f64], var: &[f64]) -> Vec<(f64, f64)> {
        let alpha = self.solve(mean);
        test_inputs
            .iter()
            .map(|x| {
                let kstar = DVector::from_iterator(
                    self.inputs.len(),
                    self.inputs.iter().map(|xi| self.kernel.eval(x, xi)),
                );
                let m = kstar.dot(&alpha);
                let kinv_kstar = self.chol.solve(&kstar);
                let prior_reduction = kstar.dot(&kinv_kstar);
                let q_term: f64 = kinv_kstar.iter().zip(var).map(|(a, v)| a * a * v).sum();
                let v = (self.kernel.signal_variance - prior_reduction + q_term).max(0.0);
                (m, v)
            })
            .collect()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }
}

impl Model for GpClassification {
    fn latent_dim(&self) -> usize {
        self.inputs.len()
    }

    fn data_count(&self) -> usize {
        self.labels.len()
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        let a = self.whiten(z);
        -0.5 * (z.len() as f64 * LN_2PI + self.log_det + a.norm_squared())
    }

    fn add_grad_log_prior(&self, z: &[f64], grad: &mut [f64]) {
        let kinv_f = self.solve(z);
        for (g, v) in grad.iter_mut().zip(kinv_f.iter()) {
            *g -= v;
        }
    }

    fn log_lik_term(&self, i: usize, z: &[f64]) -> f64 {
        log_ndtr(self.labels[i] * z[i])
    }

    fn add_grad_log_lik_term(&self, i: usize, z: &[f64], scale: f64, grad: &mut [f64]) {
        grad[i] += scale * self.labels[i] * d_log_ndtr(self.labels[i] * z[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::{fd_grad, rel_err};
    use crate::model::grad_log_joint;

    fn toy() -> Dataset {
        Dataset::new(
            vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.5, 2.0]],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap()
    }

    /// Dense MVN with an explicit inverse and determinant (LU), not Cholesky.
    fn dense_logpdf(f: &[f64], cov: &DMatrix<f64>) -> f64 {
        let n = f.len();
        let x = DVector::from_column_slice(f);
        let inv = cov.clone().try_inverse().unwrap();
        -0.5 * (n as f64 * LN_2PI + cov.determinant().ln() + (x.transpose() * inv * &x)[(0, 0)])
    }

    #[test]
    fn log_prior_matches_dense_mvn() {
        let kernel = KernelParams::new(1.3, 0.8).unwrap();
        let ds = toy();
        let m = make_gp_classification(&ds, kernel).unwrap();
        let pts: Vec<Vec<f64>> = (0..3).map(|i| ds.row(i).to_vec()).collect();
        let cov = DMatrix::from_fn(3, 3, |i, j| {
            kernel.eval(&pts[i], &pts[j]) + if i == j { m.jitter() } else { 0.0 }
        });
        let f = [0.4, -1.2, 0.3];
        assert!((m.log_prior(&f) - dense_logpdf(&f, &cov)).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = make_gp_classification(&toy(), KernelParams::new(1.3, 0.8).unwrap()).unwrap();
        for f in [[0.4, -1.2, 0.3], [-2.0, 0.1, 1.5]] {
            let g = grad_log_joint(&m, &f, None).unwrap();
            assert!(rel_err(&g, &fd_grad(&m, &f, 1e-5)) < 1e-5);
        }
    }

    #[test]
    fn prior_invariant_to_consistent_reordering() {
        let kernel = KernelParams::new(1.3, 0.8).unwrap();
        let ds = toy();
        let perm = [2, 0, 1];
        let m = make_gp_classification(&ds, kernel).unwrap();
        let mp = make_gp_classification(&ds.subset(&perm), kernel).unwrap();
        let f = [0.4, -1.2, 0.3];
        let fp: Vec<f64> = perm.iter().map(|&i| f[i]).collect();
        assert!((m.log_prior(&f) - mp.log_prior(&fp)).abs() < 1e-10);
    }

    #[test]
    fn duplicate_inputs_factorize_with_jitter() {
        let ds = Dataset::new(vec![vec![1.0], vec![1.0]], vec![1.0, -1.0]).unwrap();
        let m = make_gp_classification(&ds, KernelParams::new(1.0, 1.0).unwrap()).unwrap();
        assert!(m.jitter() > 0.0);
        assert!(m.log_prior(&[0.1, 0.1]).is_finite());
    }

    #[test]
    fn size_cap_enforced() {
        assert!(make_gp_classification_capped(&toy(), KernelParams::new(1.0, 1.0).unwrap(), 2).is_err());
    }

    #[test]
    fn prediction_at_training_input_recovers_mean() {
        let ds = toy();
        let m = make_gp_classification(&ds, KernelParams::new(1.0, 0.5).unwrap()).unwrap();
        let mean = [0.7, -0.2, 1.1];
        let pred = m.predict_latent(&[ds.row(1).to_vec()], &mean, &[0.0; 3]);
        assert!((pred[0].0 + 0.2).abs() < 1e-4);
        assert!(pred[0].1 < 1e-4);
    }
}
