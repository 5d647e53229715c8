//! Quadrature and Monte Carlo checks of the bound and divergence identities.

use std::path::Path;

use anyhow::{ensure, Result};
use chivi::bounds::{compute_log_weights, cubo_estimate, elbo_estimate, f_divergence_taylor};
use chivi::model::{make_conjugate_gaussian, make_probit};
use chivi::oracle::{
    laplace_pilot, quad_chi_central_moment, quad_chi_divergence, quad_cubo, quad_elbo, quad_evidence,
    quad_f_divergence, quad_kl, quad_posterior, GaussianDensity, KlDirection, LogDensity, Posterior, Quadrature,
};
use chivi::rng::{purpose, NoiseStream};
use chivi::{Dataset, LogWeights, Model, VariationalParams};
use log::info;
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{Fault, RunConfig};
use crate::table::ResultTable;

/// One invariant. `slack` is the distance from failing: negative fails.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub slack: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    /// All `margins` must be `>= -tolerance`.
    fn at_least(name: &'static str, tolerance: f64, margins: &[f64], detail: String) -> Self {
        let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
        let slack = worst + tolerance;
        Self {
            name,
            passed: slack >= 0.0,
            slack,
            tolerance,
            detail,
        }
    }

    /// All `errors` must be `<= tolerance`.
    fn at_most(name: &'static str, tolerance: f64, errors: &[f64], detail: String) -> Self {
        let worst = errors.iter().copied().fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) });
        let slack = tolerance - worst;
        Self {
            name,
            passed: slack >= 0.0,
            slack,
            tolerance,
            detail,
        }
    }
}

pub struct PropertyReport {
    pub checks: Vec<Check>,
    pub fault: Option<Fault>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// A random 1-D model paired with a random Gaussian `q` around its posterior.
pub struct Case {
    pub model: Box<dyn Model>,
    pub q: VariationalParams,
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Alternates conjugate Gaussian and probit models. `q` sits within one
/// posterior sd of the mode with sd in `[0.9, 1.6]` times the posterior's.
pub fn random_case(seed: u64, index: u64) -> Result<Case> {
    let mut rng = NoiseStream::with_purpose(seed, purpose::DATA, index).rng(0);
    let model: Box<dyn Model> = if index % 2 == 0 {
        let n = rng.random_range(1..=5);
        let data = (0..n).map(|_| vec![uniform(&mut rng, -2.0, 2.0)]).collect();
        Box::new(make_conjugate_gaussian(
            vec![uniform(&mut rng, -1.0, 1.0)],
            vec![uniform(&mut rng, 0.5, 3.0)],
            uniform(&mut rng, 0.5, 2.0),
            data,
        )?)
    } else {
        let n = rng.random_range(3..=6);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![uniform(&mut rng, -2.0, 2.0)]).collect();
        let labels = (0..n).map(|_| if rng.random::<f64>() < 0.7 { 1.0 } else { -1.0 }).collect();
        Box::new(make_probit(&Dataset::new(rows, labels)?, uniform(&mut rng, 1.0, 4.0), false)?)
    };
    let (mode, sd) = laplace_pilot(&Posterior(model.as_ref()));
    let mean = mode[0] + uniform(&mut rng, -1.0, 1.0) * sd[0];
    let scale = sd[0] * uniform(&mut rng, 0.9, 1.6);
    let q = VariationalParams::mean_field(vec![mean], vec![scale.ln()])?;
    Ok(Case { model, q })
}

/// `z ↦ a·z + b` pushed through a 1-D density.
struct Affine<'a> {
    inner: &'a dyn LogDensity,
    a: f64,
    b: f64,
}

impl LogDensity for Affine<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        self.inner.log_density(&[(z[0] - self.b) / self.a]) - self.a.abs().ln()
    }

    fn is_normalized(&self) -> bool {
        self.inner.is_normalized()
    }
}

struct Suite<'a> {
    cfg: &'a RunConfig,
    quad: Quadrature,
    flip: bool,
}

impl Suite<'_> {
    fn cubo(&self, model: &dyn Model, q: &VariationalParams, n: f64) -> Result<f64> {
        let v = quad_cubo(model, q, n, &self.quad)?;
        Ok(if self.flip { -v } else { v })
    }

    fn mc_cubo(&self, lw: &LogWeights, n: f64) -> Result<f64> {
        let v = cubo_estimate(lw, n)?.value;
        Ok(if self.flip { -v } else { v })
    }

    fn tightness(&self) -> Result<Check> {
        let mut errors = Vec::new();
        for i in 0..self.cfg.property_suite.tightness_models {
            let case = random_case(self.cfg.seed, i as u64)?;
            let lz = quad_evidence(case.model.as_ref(), &self.quad)?;
            errors.push((self.cubo(case.model.as_ref(), &case.q, 1.0)? - lz).abs());
        }
        Ok(Check::at_most(
            "tightness_n1",
            1e-8,
            &errors,
            format!("|CUBO_1 - log p(x)| over {} models: {}", errors.len(), sci(&errors)),
        ))
    }

    /// The sandwich, the monotonicity in `n` and the `n → 0` limit on
    /// shared cases.
    fn sandwich_family(&self) -> Result<Vec<Check>> {
        let s = &self.cfg.property_suite;
        let mut orders = s.orders.clone();
        orders.sort_by(f64::total_cmp);
        let (mut bracket, mut monotone) = (Vec::new(), Vec::new());
        for i in 0..s.sandwich_pairs {
            let case = random_case(self.cfg.seed, 1000 + i as u64)?;
            let m = case.model.as_ref();
            let lz = quad_evidence(m, &self.quad)?;
            let elbo = quad_elbo(m, &case.q, &self.quad)?;
            bracket.push(lz - elbo);
            let cubos = orders.iter().map(|&n| self.cubo(m, &case.q, n)).collect::<Result<Vec<_>>>()?;
            for c in &cubos {
                bracket.push(c - lz);
            }
            for w in cubos.windows(2) {
                monotone.push(if w[0] == w[1] { 0.0 } else { w[1] - w[0] });
            }
        }
        let near = self.near_posterior_limit()?;
        let extrapolated = self.extrapolated_limit()?;
        Ok(vec![
            Check::at_least(
                "sandwich",
                1e-8,
                &bracket,
                format!("ELBO <= log p(x) <= CUBO_n on {} pairs, n in {orders:?}", s.sandwich_pairs),
            ),
            Check::at_least(
                "cubo_monotone_in_n",
                1e-8,
                &monotone,
                format!("CUBO_n non-decreasing over n in {orders:?}; smallest step {:.3e}", min(&monotone)),
            ),
            near,
            extrapolated,
        ])
    }

    /// `CUBO_0.01` against the ELBO on Gaussian-posterior models with `q`
    /// shifted by 0.1 sd and widened by 10%, where the `(n/2) Var(log w)`
    /// remainder is small.
    fn near_posterior_limit(&self) -> Result<Check> {
        let mut errors = Vec::new();
        for i in 0..self.cfg.property_suite.tightness_models {
            let case = random_case(self.cfg.seed, 2000 + 2 * i as u64)?;
            let m = case.model.as_ref();
            let post = quad_posterior(m, &self.quad)?;
            let (mean, sd) = (post.posterior_mean[0], post.posterior_sd[0]);
            let q = VariationalParams::mean_field(vec![mean + 0.1 * sd], vec![(1.1 * sd).ln()])?;
            errors.push((self.cubo(m, &q, 0.01)? - quad_elbo(m, &q, &self.quad)?).abs());
        }
        Ok(Check::at_most(
            "cubo_limit_n_to_0",
            1e-3,
            &errors,
            format!("|CUBO_0.01 - ELBO| near the posterior: {}", sci(&errors)),
        ))
    }

    /// The same limit on arbitrary pairs: `(8 C_{n/4} - 6 C_{n/2} + C_n) / 3`
    /// cancels the terms linear and quadratic in `n`.
    fn extrapolated_limit(&self) -> Result<Check> {
        let (mut raw, mut errors) = (Vec::new(), Vec::new());
        for i in 0..self.cfg.property_suite.sandwich_pairs {
            let case = random_case(self.cfg.seed, 1000 + i as u64)?;
            let m = case.model.as_ref();
            let elbo = quad_elbo(m, &case.q, &self.quad)?;
            let c = |n: f64| self.cubo(m, &case.q, n);
            let (c1, c2, c4) = (c(0.01)?, c(0.005)?, c(0.0025)?);
            raw.push(c1 - elbo);
            errors.push(((8.0 * c4 - 6.0 * c2 + c1) / 3.0 - elbo).abs());
        }
        Ok(Check::at_most(
            "cubo_limit_extrapolated",
            1e-3,
            &errors,
            format!(
                "extrapolated CUBO_0 - ELBO on {} pairs: {}; unextrapolated CUBO_0.01 - ELBO: {}",
                errors.len(),
                sci(&errors),
                sci(&raw)
            ),
        ))
    }

    fn gaussian(mean: f64, sd: f64) -> Result<GaussianDensity> {
        Ok(GaussianDensity::new(vec![mean], vec![sd])?)
    }

    fn affine_invariance(&self) -> Result<Check> {
        let case = random_case(self.cfg.seed, 3000 + 1)?;
        let p = Posterior(case.model.as_ref());
        let q = &case.q;
        let mut errors = Vec::new();
        for (a, b) in [(2.5, -1.0), (-0.7, 3.0), (0.2, 0.5)] {
            let (pt, qt) = (Affine { inner: &p, a, b }, Affine { inner: q, a, b });
            for n in [2.0, 3.0] {
                let d0 = quad_chi_divergence(&p, q, n, &self.quad)?.value();
                let d1 = quad_chi_divergence(&pt, &qt, n, &self.quad)?.value();
                errors.push((d1 - d0).abs());
            }
            let k0 = quad_kl(&p, q, KlDirection::QP, &self.quad)?;
            let k1 = quad_kl(&pt, &qt, KlDirection::QP, &self.quad)?;
            errors.push((k1 - k0).abs());
        }
        Ok(Check::at_most(
            "affine_invariance",
            1e-6,
            &errors,
            format!("chi^2, chi^3 and KL(q||p) under three affine maps; errors {}", sci(&errors)),
        ))
    }

    fn factorization(&self) -> Result<Check> {
        let (m1, s1, m2, s2) = ((0.3, 1.0), (-0.2, 1.2), (1.0, 0.8), (0.7, 0.9));
        let p = GaussianDensity::new(vec![m1.0, m2.0], vec![m1.1, m2.1])?;
        let q = GaussianDensity::new(vec![s1.0, s2.0], vec![s1.1, s2.1])?;
        let mut errors = Vec::new();
        for n in [2.0, 3.0] {
            let joint = 1.0 + quad_chi_divergence(&p, &q, n, &self.quad)?.value();
            let d1 = quad_chi_divergence(&Self::gaussian(m1.0, m1.1)?, &Self::gaussian(s1.0, s1.1)?, n, &self.quad)?.value();
            let d2 = quad_chi_divergence(&Self::gaussian(m2.0, m2.1)?, &Self::gaussian(s2.0, s2.1)?, n, &self.quad)?.value();
            errors.push((joint - (1.0 + d1) * (1.0 + d2)).abs());
        }
        Ok(Check::at_most(
            "factorization",
            1e-6,
            &errors,
            format!("1 + D(p1 p2 || q1 q2) = (1 + D(p1 || q1)) (1 + D(p2 || q2)) for n = 2, 3; errors {}", sci(&errors)),
        ))
    }

    fn conjugate_symmetry(&self) -> Result<Check> {
        let f = |t: f64| (t - 1.0).powi(2);
        let f_star = |t: f64| (1.0 - t).powi(2) / t;
        let mut errors = Vec::new();
        for (pm, ps, qm, qs) in [(0.0, 1.0, 0.5, 1.3), (1.0, 0.7, 0.2, 1.0), (-0.5, 1.5, 0.0, 1.2)] {
            let (p, q) = (Self::gaussian(pm, ps)?, Self::gaussian(qm, qs)?);
            let forward = quad_f_divergence(&p, &q, &f, &self.quad)?;
            let reverse = quad_f_divergence(&q, &p, &f_star, &self.quad)?;
            errors.push((forward - reverse).abs());
        }
        Ok(Check::at_most(
            "conjugate_symmetry",
            1e-6,
            &errors,
            format!("D_f(p||q) = D_f*(q||p) for f(t) = (t-1)^2; errors {}", sci(&errors)),
        ))
    }

    fn nonnegativity(&self) -> Result<Check> {
        let mut values = Vec::new();
        for i in 0..self.cfg.property_suite.tightness_models {
            let case = random_case(self.cfg.seed, 4000 + i as u64)?;
            let p = Posterior(case.model.as_ref());
            for &n in &self.cfg.property_suite.orders {
                values.push(quad_chi_divergence(&p, &case.q, n, &self.quad)?.value());
            }
            values.push(quad_kl(&p, &case.q, KlDirection::QP, &self.quad)?);
        }
        Ok(Check::at_least(
            "nonnegativity",
            1e-10,
            &values,
            format!("chi^n and KL divergences >= 0; smallest {:.3e}", min(&values)),
        ))
    }

    fn taylor_kl(&self) -> Result<Check> {
        let (p, q) = (Self::gaussian(0.0, 1.0)?, Self::gaussian(0.15, 1.1)?);
        let chi2 = quad_chi_divergence(&p, &q, 2.0, &self.quad)?.value();
        ensure!(chi2 <= 0.1, "Taylor fixture has chi^2 {chi2} > 0.1");
        let moments = (2..=6)
            .map(|i| Ok(quad_chi_central_moment(&p, &q, i, &self.quad)?.value()))
            .collect::<Result<Vec<_>>>()?;
        // f(t) = t ln t: f''(1) = 1, f⁽ⁱ⁾(1) = (-1)ⁱ (i-2)!
        let derivs: Vec<f64> = (2..=6)
            .map(|i: i32| (-1f64).powi(i) * (1..=(i - 2)).map(f64::from).product::<f64>())
            .collect();
        let approx = f_divergence_taylor(&moments, &derivs)?;
        let exact = quad_kl(&p, &q, KlDirection::PQ, &self.quad)?;
        let rel = (approx - exact).abs() / exact.abs();
        Ok(Check::at_most(
            "taylor_kl",
            0.10,
            &[rel],
            format!("k = 6 series {approx:.6e} vs KL(p||q) {exact:.6e}; chi^2 = {chi2:.4}"),
        ))
    }

    /// Spread of `p̂ = (1/S) Σ w` across replicates against
    /// `(exp(2 · CUBO_2) - p(x)²) / S`, both relative to `p(x)²`.
    fn is_variance_identity(&self) -> Result<Check> {
        let s = &self.cfg.property_suite;
        let fixtures = [(0.3, 1.1), (-0.5, 1.3), (0.8, 1.5)];
        let model = make_conjugate_gaussian(vec![0.0], vec![1.0], 1.0, vec![vec![0.4], vec![1.2]])?;
        let post = model.posterior();
        let (pm, ps) = (post.mean[0], post.var[0].sqrt());
        let lz = model.log_evidence();
        let mut margins = Vec::new();
        let mut detail = Vec::new();
        for (k, (shift, widen)) in fixtures.into_iter().enumerate() {
            let q = VariationalParams::mean_field(vec![pm + shift * ps], vec![(widen * ps).ln()])?;
            let ratios = (0..s.is_replicates)
                .map(|r| {
                    let stream = NoiseStream::with_purpose(self.cfg.seed, purpose::ORACLE, (k * s.is_replicates + r) as u64);
                    let lw = compute_log_weights(&model, &q, s.is_samples, None, stream)?;
                    let sum: f64 = lw.values.iter().map(|v| (v - lz).exp()).sum();
                    Ok(sum / s.is_samples as f64)
                })
                .collect::<Result<Vec<_>>>()?;
            let r = ratios.len() as f64;
            let mean = ratios.iter().sum::<f64>() / r;
            let m2 = ratios.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r;
            let m4 = ratios.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / r;
            let var = m2 * r / (r - 1.0);
            let se = ((m4 - m2 * m2).max(0.0) / r).sqrt();
            let cubo2 = self.cubo(&model, &q, 2.0)?;
            let identity = ((2.0 * (cubo2 - lz)).exp() - 1.0) / s.is_samples as f64;
            margins.push(3.0 * se - (var - identity).abs());
            detail.push(format!("{var:.4e} vs {identity:.4e} (se {se:.1e})"));
        }
        Ok(Check::at_least(
            "is_variance_identity",
            0.0,
            &margins,
            format!("Var(p_hat)/p(x)^2 over {} replicates of S = {}: {}", s.is_replicates, s.is_samples, detail.join("; ")),
        ))
    }

    /// Per-sample-set identities of the Monte Carlo estimators.
    fn monte_carlo(&self) -> Result<Vec<Check>> {
        let (mut bracket, mut monotone, mut shift) = (Vec::new(), Vec::new(), Vec::new());
        let mut orders = self.cfg.property_suite.orders.clone();
        orders.sort_by(f64::total_cmp);
        for i in 0..self.cfg.property_suite.tightness_models {
            let case = random_case(self.cfg.seed, 5000 + i as u64)?;
            let stream = NoiseStream::with_purpose(self.cfg.seed, purpose::MONITOR, i as u64);
            let lw = compute_log_weights(case.model.as_ref(), &case.q, 10_000, None, stream)?;
            let elbo = elbo_estimate(&lw).value;
            let cubos = orders.iter().map(|&n| self.mc_cubo(&lw, n)).collect::<Result<Vec<_>>>()?;
            bracket.extend(cubos.iter().map(|c| c - elbo));
            monotone.extend(cubos.windows(2).map(|w| w[1] - w[0]));
            let c = 37.5;
            let shifted = lw.shifted(c);
            for &n in &orders {
                shift.push((self.mc_cubo(&shifted, n)? - self.mc_cubo(&lw, n)? - if self.flip { -c } else { c }).abs());
            }
        }
        Ok(vec![
            Check::at_least(
                "mc_sandwich",
                1e-10,
                &bracket,
                format!("Monte Carlo ELBO <= CUBO_n on shared draws; smallest gap {:.3e}", min(&bracket)),
            ),
            Check::at_least(
                "mc_cubo_monotone_in_n",
                1e-10,
                &monotone,
                format!("Monte Carlo CUBO_n non-decreasing on shared draws; smallest step {:.3e}", min(&monotone)),
            ),
            Check::at_most(
                "mc_shift_invariance",
                1e-9,
                &shift,
                format!("CUBO_n(log w + c) = CUBO_n(log w) + c; largest error {:.3e}", max(&shift)),
            ),
        ])
    }
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn execute(cfg: &RunConfig) -> Result<PropertyReport> {
    let suite = Suite {
        cfg,
        quad: cfg.oracle.quadrature,
        flip: cfg.inject_fault == Some(Fault::CuboSignFlip),
    };
    let mut checks = vec![suite.tightness()?];
    checks.extend(suite.sandwich_family()?);
    checks.push(suite.affine_invariance()?);
    checks.push(suite.factorization()?);
    checks.push(suite.conjugate_symmetry()?);
    checks.push(suite.nonnegativity()?);
    checks.push(suite.taylor_kl()?);
    checks.push(suite.is_variance_identity()?);
    checks.extend(suite.monte_carlo()?);
    for c in &checks {
        info!("{:<24} {} slack {:.3e}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.slack);
    }
    Ok(PropertyReport {
        checks,
        fault: cfg.inject_fault,
    })
}

pub fn write(report: &PropertyReport, dir: &Path) -> Result<serde_json::Value> {
    let mut table = ResultTable::default();
    for c in &report.checks {
        table.push("property_suite", c.name, "slack", &[c.slack])?;
    }
    table.write(dir, "property_suite")?;
    Ok(json!({
        "passed": report.passed(),
        "failures": report.failures(),
        "fault": report.fault,
        "checks": report.checks,
    }))
}
