use serde::{Deserialize, Serialize};

use super::divergence::{quad_cubo, quad_evidence};
use super::quadrature::{Quadrature, MAX_QUAD_DIM};
use crate::bounds::compute_log_weights;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::NoiseStream;
use crate::variational::VariationalParams;

/// Variance of the importance-sampling evidence estimate `p̂ = (1/S) Σ w⁽ˢ⁾`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsVariance {
    pub samples: usize,
    /// `Var̂(w) / S`.
    pub variance: f64,
    /// Standard error of `variance`.
    pub std_error: f64,
    /// `(exp(2 · CUBO₂) - p(x)²) / S` by quadrature, when `D <= 3`.
    pub identity: Option<f64>,
}

pub fn is_variance(
    model: &dyn Model,
    q: &VariationalParams,
    samples: usize,
    stream: NoiseStream,
    quad: &Quadrature,
) -> Result<IsVariance> {
    if samples < 1000 {
        return Err(Error::invalid(format!("is_variance needs S >= 1000, got {samples}")));
    }
    let lw = compute_log_weights(model, q, samples, None, stream)?;
    // work with w / e^c to keep the moments representable
    let c = lw.max_log_w;
    let w: Vec<f64> = lw.values.iter().map(|v| (v - c).exp()).collect();
    let s = samples as f64;
    let mean = w.iter().sum::<f64>() / s;
    let m2 = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / s;
    let m4 = w.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / s;
    let var = m2 * s / (s - 1.0);
    let var_se = ((m4 - m2 * m2).max(0.0) / s).sqrt();
    let scale = (2.0 * c).exp();
    let identity = if model.latent_dim() <= MAX_QUAD_DIM {
        let cubo2 = quad_cubo(model, q, 2.0, quad)?;
        let lz = quad_evidence(model, quad)?;
        Some(((2.0 * cubo2).exp() - (2.0 * lz).exp()) / s)
    } else {
        None
    };
    Ok(IsVariance {
        samples,
        variance: var * scale / s,
        std_error: var_se * scale / s,
        identity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_conjugate_gaussian;

    #[test]
    fn exact_posterior_has_zero_variance() {
        let m = make_conjugate_gaussian(vec![0.0], vec![1.0], 1.0, vec![vec![0.4]]).unwrap();
        let post = m.posterior();
        let q = VariationalParams::mean_field(post.mean.clone(), vec![0.5 * post.var[0].ln()]).unwrap();
        let r = is_variance(&m, &q, 2000, NoiseStream::new(1, 0), &Quadrature::default()).unwrap();
        assert!(r.variance < 1e-25);
        assert!(r.identity.unwrap().abs() < 1e-10);
    }

    #[test]
    fn matches_the_chi_square_identity() {
        let m = make_conjugate_gaussian(vec![0.0], vec![1.0], 1.0, vec![vec![0.4]]).unwrap();
        let q = VariationalParams::mean_field(vec![0.5], vec![0.0]).unwrap();
        let r = is_variance(&m, &q, 200_000, NoiseStream::new(2, 0), &Quadrature::default()).unwrap();
        let id = r.identity.unwrap();
        assert!((r.variance - id).abs() < 3.0 * r.std_error, "{} vs {id} (se {})", r.variance, r.std_error);
    }

    #[test]
    fn needs_enough_samples() {
        let m = make_conjugate_gaussian(vec![0.0], vec![1.0], 1.0, vec![]).unwrap();
        let q = VariationalParams::standard(1, crate::variational::Family::MeanField);
        assert!(is_variance(&m, &q, 10, NoiseStream::new(0, 0), &Quadrature::default()).is_err());
    }
}
