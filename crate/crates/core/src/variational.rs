//! Gaussian variational families.
//!
//! Scales are stored as `log σ` so every parameter is unconstrained. Note the
//! factor of two against "log-variance": `log σ = ½ log σ²`.
//!
//! The full-rank family stores its lower Cholesky factor `L` as a log-diagonal
//! (in `log_scale`) plus the strictly-lower entries row by row (in `lower`).
//! Flattened parameter vectors are laid out as `[mean | log_scale | lower]`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::NoiseDraw;
use crate::special::LN_2PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    MeanField,
    FullRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationalParams {
    pub family: Family,
    pub mean: Vec<f64>,
    pub log_scale: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lower: Vec<f64>,
}

#[inline]
fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(j < i);
    i * (i - 1) / 2 + j
}

impl VariationalParams {
    pub fn mean_field(mean: Vec<f64>, log_scale: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), log_scale.len())?;
        let p = Self {
            family: Family::MeanField,
            mean,
            log_scale,
            lower: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn full_rank(mean: Vec<f64>, log_diag: Vec<f64>, lower: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        check_dim(d, log_diag.len())?;
        check_dim(d * d.saturating_sub(1) / 2, lower.len())?;
        let p = Self {
            family: Family::FullRank,
            mean,
            log_scale: log_diag,
            lower,
        };
        p.validate()?;
        Ok(p)
    }

    /// `μ = 0`, `σ = 1`.
    pub fn standard(dim: usize, family: Family) -> Self {
        let lower = match family {
            Family::MeanField => Vec::new(),
            Family::FullRank => vec![0.0; dim * dim.saturating_sub(1) / 2],
        };
        Self {
            family,
            mean: vec![0.0; dim],
            log_scale: vec![0.0; dim],
            lower,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        check_dim(d, self.log_scale.len())?;
        let want_lower = match self.family {
            Family::MeanField => 0,
            Family::FullRank => d * d.saturating_sub(1) / 2,
        };
        check_dim(want_lower, self.lower.len())?;
        if self
            .mean
            .iter()
            .chain(&self.log_scale)
            .chain(&self.lower)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                context: "variational parameters".into(),
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim() + self.lower.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.mean);
        v.extend_from_slice(&self.log_scale);
        v.extend_from_slice(&self.lower);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim(self.num_params(), flat.len())?;
        let d = self.dim();
        self.mean.copy_from_slice(&flat[..d]);
        self.log_scale.copy_from_slice(&flat[d..2 * d]);
        self.lower.copy_from_slice(&flat[2 * d..]);
        Ok(())
    }

    /// Per-dimension `σ = exp(ℓ)` (the Cholesky diagonal for full-rank).
    pub fn scale(&self) -> Vec<f64> {
        self.log_scale.iter().map(|l| l.exp()).collect()
    }

    /// Marginal standard deviations `sqrt(diag(L Lᵀ))`.
    pub fn marginal_sd(&self) -> Vec<f64> {
        match self.family {
            Family::MeanField => self.scale(),
            Family::FullRank => (0..self.dim())
                .map(|i| {
                    let mut s = self.log_scale[i].exp().powi(2);
                    for j in 0..i {
                        s += self.lower[tri_index(i, j)].powi(2);
                    }
                    s.sqrt()
                })
                .collect(),
        }
    }

    #[inline]
    fn l_entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.log_scale[i].exp()
        } else {
            self.lower[tri_index(i, j)]
        }
    }

    /// `u = L⁻¹ (z - μ)`.
    fn standardize(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut u = vec![0.0; d];
        match self.family {
            Family::MeanField => {
                for i in 0..d {
                    u[i] = (z[i] - self.mean[i]) * (-self.log_scale[i]).exp();
                }
            }
            Family::FullRank => {
                for i in 0..d {
                    let mut r = z[i] - self.mean[i];
                    for j in 0..i {
                        r -= self.lower[tri_index(i, j)] * u[j];
                    }
                    u[i] = r / self.log_scale[i].exp();
                }
            }
        }
        u
    }

    /// `L⁻ᵀ u`.
    fn back_solve(&self, u: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        match self.family {
            Family::MeanField => {
                for i in 0..d {
                    out[i] = u[i] * (-self.log_scale[i]).exp();
                }
            }
            Family::FullRank => {
                for i in (0..d).rev() {
                    let mut r = u[i];
                    for k in i + 1..d {
                        r -= self.lower[tri_index(k, i)] * out[k];
                    }
                    out[i] = r / self.log_scale[i].exp();
                }
            }
        }
        out
    }

    /// `z = g(λ, ε) = μ + L ε`.
    pub fn reparam_sample(&self, noise: &NoiseDraw) -> Result<Vec<f64>> {
        self.transform(&noise.eps)
    }

    pub fn transform(&self, eps: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), eps.len())?;
        let d = self.dim();
        let mut z = self.mean.clone();
        for i in 0..d {
            match self.family {
                Family::MeanField => z[i] += self.log_scale[i].exp() * eps[i],
                Family::FullRank => {
                    for j in 0..=i {
                        z[i] += self.l_entry(i, j) * eps[j];
                    }
                }
            }
        }
        Ok(z)
    }

    pub fn log_q(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.dim(), z.len())?;
        let u = self.standardize(z);
        let quad: f64 = u.iter().map(|x| x * x).sum();
        let log_det: f64 = self.log_scale.iter().sum();
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + quad) - log_det)
    }

    /// `∇_z log q(z)`.
    pub fn grad_z_log_q(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        let u = self.standardize(z);
        Ok(self.back_solve(&u).into_iter().map(|v| -v).collect())
    }

    /// Score `∇_λ log q(z; λ)` at fixed `z` (flattened layout).
    ///
    /// Mean-field: `∂/∂μ = (z-μ)/σ²`, `∂/∂ℓ = (z-μ)²/σ² - 1`.
    pub fn grad_params_log_q(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        let d = self.dim();
        let u = self.standardize(z);
        let v = self.back_solve(&u); // L⁻ᵀ u
        let mut g = vec![0.0; self.num_params()];
        g[..d].copy_from_slice(&v);
        // ∂/∂L = lower(L⁻ᵀ u uᵀ) - diag(1/Lᵢᵢ)
        for i in 0..d {
            g[d + i] = v[i] * u[i] * self.log_scale[i].exp() - 1.0;
        }
        if self.family == Family::FullRank {
            for i in 1..d {
                for j in 0..i {
                    g[2 * d + tri_index(i, j)] = v[i] * u[j];
                }
            }
        }
        Ok(g)
    }

    /// Vector-Jacobian product `(∂g/∂λ)ᵀ v` of the reparameterization at `ε`.
    pub fn pullback(&self, eps: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        check_dim(d, eps.len())?;
        check_dim(d, v.len())?;
        let mut g = vec![0.0; self.num_params()];
        g[..d].copy_from_slice(v);
        for i in 0..d {
            g[d + i] = v[i] * self.log_scale[i].exp() * eps[i];
        }
        if self.family == Family::FullRank {
            for i in 1..d {
                for j in 0..i {
                    g[2 * d + tri_index(i, j)] = v[i] * eps[j];
                }
            }
        }
        Ok(g)
    }

    /// Differential entropy `½ D (1 + log 2π) + Σ ℓ`.
    pub fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (1.0 + LN_2PI) + self.log_scale.iter().sum::<f64>()
    }

    /// Clamps `ℓ` into `[lo, hi]`; returns how many entries were clamped.
    pub fn clamp_log_scale(&mut self, lo: f64, hi: f64) -> usize {
        let mut hits = 0;
        for l in &mut self.log_scale {
            if *l < lo || *l > hi {
                *l = l.clamp(lo, hi);
                hits += 1;
            }
        }
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NoiseStream;
    use approx::assert_relative_eq;

    fn mf(mean: &[f64], ls: &[f64]) -> VariationalParams {
        VariationalParams::mean_field(mean.to_vec(), ls.to_vec()).unwrap()
    }

    fn fr_example() -> VariationalParams {
        VariationalParams::full_rank(vec![0.3, -1.0, 0.5], vec![0.1, -0.4, 0.2], vec![0.7, -0.2, 0.4]).unwrap()
    }

    #[test]
    fn reparam_identity_cases() {
        let p = mf(&[1.5, -2.0], &[0.3, 0.9]);
        assert_eq!(p.reparam_sample(&NoiseDraw::fixed(vec![0.0, 0.0])).unwrap(), vec![1.5, -2.0]);
        let unit = VariationalParams::standard(2, Family::MeanField);
        assert_eq!(unit.reparam_sample(&NoiseDraw::fixed(vec![1.0, -1.0])).unwrap(), vec![1.0, -1.0]);
        assert!(matches!(
            unit.reparam_sample(&NoiseDraw::fixed(vec![1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn log_q_mode_and_factorization() {
        let p = VariationalParams::standard(1, Family::MeanField);
        assert_relative_eq!(p.log_q(&[0.0]).unwrap(), -0.5 * LN_2PI);
        let p = mf(&[0.5, -1.0], &[0.3, -0.2]);
        assert_relative_eq!(p.log_q(&p.mean).unwrap(), -LN_2PI - 0.1, max_relative = 1e-14);
        let z = [0.1, 0.7];
        let a = mf(&[0.5], &[0.3]).log_q(&[0.1]).unwrap();
        let b = mf(&[-1.0], &[-0.2]).log_q(&[0.7]).unwrap();
        assert_relative_eq!(p.log_q(&z).unwrap(), a + b, max_relative = 1e-14);
    }

    #[test]
    fn score_at_mode_and_hand_value() {
        let p = mf(&[0.5, -1.0], &[0.3, -0.2]);
        let g = p.grad_params_log_q(&p.mean).unwrap();
        assert_eq!(g, vec![0.0, 0.0, -1.0, -1.0]);
        let g = VariationalParams::standard(1, Family::MeanField).grad_params_log_q(&[2.0]).unwrap();
        assert_relative_eq!(g[0], 2.0);
        assert_relative_eq!(g[1], 3.0);
    }

    fn fd_params(p: &VariationalParams, z: &[f64]) -> Vec<f64> {
        let flat = p.to_flat();
        (0..flat.len())
            .map(|k| {
                let h = 1e-6;
                let mut a = p.clone();
                let mut b = p.clone();
                let mut fa = flat.clone();
                let mut fb = flat.clone();
                fa[k] += h;
                fb[k] -= h;
                a.set_flat(&fa).unwrap();
                b.set_flat(&fb).unwrap();
                (a.log_q(z).unwrap() - b.log_q(z).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn score_matches_finite_differences() {
        let s = NoiseStream::new(11, 0);
        for (k, p) in [mf(&[0.2, -0.3, 1.0], &[0.1, -0.5, 0.4]), fr_example()].iter().enumerate() {
            for i in 0..5 {
                let z: Vec<f64> = s.draw(10 * k as u64 + i, 3).eps.iter().map(|e| 1.3 * e).collect();
                let g = p.grad_params_log_q(&z).unwrap();
                let fd = fd_params(p, &z);
                for (a, b) in g.iter().zip(&fd) {
                    assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn grad_z_and_pullback_match_finite_differences() {
        let p = fr_example();
        let eps = [0.4, -1.1, 0.8];
        let z = p.transform(&eps).unwrap();
        let gz = p.grad_z_log_q(&z).unwrap();
        for k in 0..3 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += 1e-6;
            zm[k] -= 1e-6;
            let fd = (p.log_q(&zp).unwrap() - p.log_q(&zm).unwrap()) / 2e-6;
            assert!((gz[k] - fd).abs() < 1e-6);
        }
        // pullback of a fixed vector v equals d/dλ (vᵀ g(λ, ε))
        let v = [0.3, -0.7, 1.2];
        let pb = p.pullback(&eps, &v).unwrap();
        let flat = p.to_flat();
        for k in 0..flat.len() {
            let eval = |delta: f64| {
                let mut q = p.clone();
                let mut f = flat.clone();
                f[k] += delta;
                q.set_flat(&f).unwrap();
                q.transform(&eps).unwrap().iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
            assert!((pb[k] - fd).abs() < 1e-6, "param {k}");
        }
    }

    #[test]
    fn entropy_rules() {
        let p = VariationalParams::standard(1, Family::MeanField);
        assert_relative_eq!(p.entropy(), 0.5 * (1.0 + LN_2PI));
        let q = mf(&[0.0], &[2f64.ln()]);
        assert_relative_eq!(q.entropy() - p.entropy(), 2f64.ln(), max_relative = 1e-14);
        let fr = VariationalParams::standard(3, Family::FullRank);
        assert_eq!(fr.entropy(), VariationalParams::standard(3, Family::MeanField).entropy());
    }

    #[test]
    fn full_rank_identity_matches_mean_field() {
        let fr = VariationalParams::full_rank(vec![0.5, -1.0], vec![0.3, -0.2], vec![0.0]).unwrap();
        let m = mf(&[0.5, -1.0], &[0.3, -0.2]);
        let z = [0.9, 0.1];
        assert_relative_eq!(fr.log_q(&z).unwrap(), m.log_q(&z).unwrap(), max_relative = 1e-14);
        assert_eq!(fr.marginal_sd(), m.marginal_sd());
    }

    #[test]
    fn sample_covariance_matches_scale() {
        let p = mf(&[1.0, -2.0], &[0.5, -0.7]);
        let s = NoiseStream::new(5, 1);
        let n = 100_000;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        let mut cross = 0.0;
        for i in 0..n {
            let z = p.reparam_sample(&s.draw(i, 2)).unwrap();
            for k in 0..2 {
                sums[k] += z[k];
                sq[k] += z[k] * z[k];
            }
            cross += (z[0] - 1.0) * (z[1] + 2.0);
        }
        for k in 0..2 {
            let mean = sums[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let want = (2.0 * p.log_scale[k]).exp();
            // sd of a sample variance of Gaussians is var·sqrt(2/n)
            assert!((var - want).abs() < 3.0 * want * (2.0 / n as f64).sqrt(), "dim {k}: {var} vs {want}");
        }
        let sd_prod = p.log_scale.iter().map(|l| l.exp()).product::<f64>();
        assert!((cross / n as f64).abs() < 3.0 * sd_prod / (n as f64).sqrt());
    }

    #[test]
    fn mean_log_q_is_negative_entropy() {
        let p = mf(&[0.3, 0.1, -0.4], &[0.2, -1.0, 0.7]);
        let s = NoiseStream::new(9, 2);
        let vals: Vec<f64> = (0..100_000)
            .map(|i| p.log_q(&p.reparam_sample(&s.draw(i, 3)).unwrap()).unwrap())
            .collect();
        let (mean, var) = crate::special::mean_and_var(&vals);
        assert!((mean + p.entropy()).abs() < 3.0 * (var / vals.len() as f64).sqrt());
    }

    #[test]
    fn json_shape() {
        let p = mf(&[1.0], &[0.5]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"family":"mean_field","mean":[1.0],"log_scale":[0.5]}"#);
        let back: VariationalParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<VariationalParams>(r#"{"family":"mean_field","mean":[1.0],"log_scale":[0.5],"x":1}"#).is_err());
    }

    #[test]
    fn clamp_counts_hits() {
        let mut p = mf(&[0.0, 0.0, 0.0], &[-20.0, 0.0, 9.0]);
        assert_eq!(p.clamp_log_scale(-10.0, 5.0), 2);
        assert_eq!(p.log_scale, vec![-10.0, 0.0, 5.0]);
    }
}
