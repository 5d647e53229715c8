//! Quadrature evidence, bounds and divergences between low-dimensional densities.

use serde::{Deserialize, Serialize};

use super::quadrature::{Integral, LogDensity, Posterior, Quadrature, Watch};
use super::{OracleMethod, OracleResult};
use crate::error::{check_dim, Error, Result};
use crate::model::Model;

/// A divergence that may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceValue {
    Finite(f64),
    Infinite,
}

impl DivergenceValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            Self::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Self::Infinite
    }

    /// `+∞` for the infinite case.
    pub fn value(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(q ‖ p)`, the direction the ELBO minimizes.
    QP,
    /// `KL(p ‖ q)`.
    PQ,
}

fn check_pair(p: &dyn LogDensity, q: &dyn LogDensity) -> Result<()> {
    check_dim(p.dim(), q.dim())
}

/// `log p(x) = log ∫ p(x, z) dz`.
pub fn quad_evidence(model: &dyn Model, quad: &Quadrature) -> Result<f64> {
    quad.log_normalizer(&Posterior(model))
}

/// Evidence, posterior mean and posterior sd by quadrature.
pub fn quad_posterior(model: &dyn Model, quad: &Quadrature) -> Result<OracleResult> {
    let post = Posterior(model);
    let grid = quad.grid_for(&[&post])?;
    let log_z = quad.integrate_finite(&grid, &|z| (post.log_density(z), 1.0), Watch::LogMass)?.log_mass;
    let d = model.latent_dim();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for k in 0..d {
        let m = quad
            .integrate_finite(&grid, &|z| (post.log_density(z) - log_z, z[k]), Watch::Value)?
            .value;
        let v = quad
            .integrate_finite(&grid, &|z| (post.log_density(z) - log_z, (z[k] - m).powi(2)), Watch::Value)?
            .value;
        mean[k] = m;
        sd[k] = v.sqrt();
    }
    Ok(OracleResult {
        method: OracleMethod::Quadrature,
        log_evidence: Some(log_z),
        posterior_mean: mean,
        posterior_sd: sd,
        ..OracleResult::default()
    })
}

/// `D_{χⁿ}(p ‖ q) = E_q[(p/q)ⁿ] - 1`, with `p` normalized by quadrature if needed.
pub fn quad_chi_divergence(p: &dyn LogDensity, q: &dyn LogDensity, n: f64, quad: &Quadrature) -> Result<DivergenceValue> {
    check_pair(p, q)?;
    if !(n > 0.0) {
        return Err(Error::invalid(format!("divergence order must be positive, got {n}")));
    }
    let log_z = quad.log_normalizer(p)?;
    let grid = quad.grid_for(&[p, q])?;
    let f = |z: &[f64]| (n * (p.log_density(z) - log_z) + (1.0 - n) * q.log_density(z), 1.0);
    Ok(match quad.integrate(&grid, &f, Watch::LogMass)? {
        Integral::Finite(pass) => DivergenceValue::Finite(pass.log_mass.exp_m1()),
        Integral::Infinite => DivergenceValue::Infinite,
    })
}

/// Central moment `E_q[(p/q - 1)ⁱ]`.
pub fn quad_chi_central_moment(p: &dyn LogDensity, q: &dyn LogDensity, order: u32, quad: &Quadrature) -> Result<DivergenceValue> {
    check_pair(p, q)?;
    let log_z = quad.log_normalizer(p)?;
    let grid = quad.grid_for(&[p, q])?;
    let i = order as i32;
    let f = |z: &[f64]| {
        let lq = q.log_density(z);
        let r1 = (p.log_density(z) - log_z - lq).exp_m1();
        let sign = if r1 < 0.0 && order % 2 == 1 { -1.0 } else { 1.0 };
        (lq + f64::from(i) * r1.abs().ln(), sign)
    };
    Ok(match quad.integrate(&grid, &f, Watch::Value)? {
        Integral::Finite(pass) => DivergenceValue::Finite(pass.value),
        Integral::Infinite => DivergenceValue::Infinite,
    })
}

/// `D_f(p ‖ q) = E_q[f(p/q)]`.
pub fn quad_f_divergence(
    p: &dyn LogDensity,
    q: &dyn LogDensity,
    f: &(dyn Fn(f64) -> f64 + Sync),
    quad: &Quadrature,
) -> Result<f64> {
    check_pair(p, q)?;
    let log_z = quad.log_normalizer(p)?;
    let grid = quad.grid_for(&[p, q])?;
    let g = |z: &[f64]| {
        let lq = q.log_density(z);
        (lq, f((p.log_density(z) - log_z - lq).exp()))
    };
    Ok(quad.integrate_finite(&grid, &g, Watch::Value)?.value)
}

pub fn quad_kl(p: &dyn LogDensity, q: &dyn LogDensity, direction: KlDirection, quad: &Quadrature) -> Result<f64> {
    check_pair(p, q)?;
    let log_z = quad.log_normalizer(p)?;
    let grid = quad.grid_for(&[p, q])?;
    let g = |z: &[f64]| {
        let lp = p.log_density(z) - log_z;
        let lq = q.log_density(z);
        match direction {
            KlDirection::QP => (lq, lq - lp),
            KlDirection::PQ => (lp, lp - lq),
        }
    };
    Ok(quad.integrate_finite(&grid, &g, Watch::Value)?.value)
}

/// `CUBO_n = (1/n) log ∫ p(x, z)ⁿ q(z)^{1-n} dz` for any `n > 0`; `+∞` when
/// the integral diverges.
pub fn quad_cubo(model: &dyn Model, q: &dyn LogDensity, n: f64, quad: &Quadrature) -> Result<f64> {
    let post = Posterior(model);
    check_pair(&post, q)?;
    if !(n > 0.0) {
        return Err(Error::invalid(format!("CUBO order must be positive, got {n}")));
    }
    let grid = quad.grid_for(&[&post, q])?;
    let f = |z: &[f64]| (n * post.log_density(z) + (1.0 - n) * q.log_density(z), 1.0);
    Ok(match quad.integrate(&grid, &f, Watch::LogMass)? {
        Integral::Finite(pass) => pass.log_mass / n,
        Integral::Infinite => f64::INFINITY,
    })
}

/// `ELBO = E_q[log p(x, z) - log q(z)]`.
pub fn quad_elbo(model: &dyn Model, q: &dyn LogDensity, quad: &Quadrature) -> Result<f64> {
    let post = Posterior(model);
    check_pair(&post, q)?;
    let grid = quad.grid_for(&[&post, q])?;
    let g = |z: &[f64]| {
        let lq = q.log_density(z);
        (lq, post.log_density(z) - lq)
    };
    Ok(quad.integrate_finite(&grid, &g, Watch::Value)?.value)
}
