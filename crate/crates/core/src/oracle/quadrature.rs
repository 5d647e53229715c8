//! Tensor-product trapezoid quadrature in log space, for `D <= 3`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{log_joint, Model};
use crate::special::{log_sum_exp, normal_log_pdf, pairwise_sum};
use crate::variational::VariationalParams;

pub const MAX_QUAD_DIM: usize = 3;
pub const MIN_NODES: usize = 32;

/// A (possibly unnormalized) log-density on `ℝᴰ`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// `-∞` outside the support; never NaN.
    fn log_density(&self, z: &[f64]) -> f64;

    fn is_normalized(&self) -> bool {
        false
    }

    /// Mode and per-dimension spread used to place the grid.
    fn location(&self) -> (Vec<f64>, Vec<f64>) {
        laplace_pilot(self)
    }
}

/// Diagonal Gaussian `N(mean, diag(sd²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDensity {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), sd.len())?;
        if sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("Gaussian needs finite means and positive sds"));
        }
        Ok(Self { mean, sd })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            sd: vec![1.0; dim],
        }
    }
}

impl LogDensity for GaussianDensity {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(x, (m, s))| normal_log_pdf(*x, *m, s * s))
            .sum()
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn location(&self) -> (Vec<f64>, Vec<f64>) {
        (self.mean.clone(), self.sd.clone())
    }
}

impl LogDensity for VariationalParams {
    fn dim(&self) -> usize {
        VariationalParams::dim(self)
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        self.log_q(z).unwrap_or(f64::NEG_INFINITY)
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn location(&self) -> (Vec<f64>, Vec<f64>) {
        (self.mean.clone(), self.marginal_sd())
    }
}

/// The unnormalized posterior `p(x, z)` of a model.
pub struct Posterior<'a>(pub &'a dyn Model);

impl LogDensity for Posterior<'_> {
    fn dim(&self) -> usize {
        self.0.latent_dim()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        match log_joint(self.0, z, None) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        }
    }
}

fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, z: &[f64], h: f64) -> Vec<f64> {
    (0..z.len())
        .map(|k| {
            let mut a = z.to_vec();
            let mut b = z.to_vec();
            a[k] += h;
            b[k] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, z: &[f64], h: f64) -> DMatrix<f64> {
    let d = z.len();
    let f0 = f(z);
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let v = if i == j {
                let mut a = z.to_vec();
                let mut b = z.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - 2.0 * f0 + f(&b)) / (h * h)
            } else {
                let at = |si: f64, sj: f64| {
                    let mut p = z.to_vec();
                    p[i] += si * h;
                    p[j] += sj * h;
                    f(&p)
                };
                (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h)
            };
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Damped Newton search for the mode, then `sd = sqrt(diag((-H)⁻¹))`.
///
/// Falls back to unit spread when the curvature is not usable.
pub fn laplace_pilot<D: LogDensity + ?Sized>(density: &D) -> (Vec<f64>, Vec<f64>) {
    let d = density.dim();
    let f = |z: &[f64]| density.log_density(z);
    let mut z = vec![0.0; d];
    let mut fz = f(&z);
    let mut step_cap = 1.0;
    for _ in 0..200 {
        let g = fd_gradient(&f, &z, 1e-5);
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        if crate::special::l2_norm(&g) < 1e-9 {
            break;
        }
        let neg_h = -fd_hessian(&f, &z, 1e-4);
        let dir: Vec<f64> = match neg_h.clone().cholesky() {
            Some(c) => c.solve(&DVector::from_vec(g.clone())).iter().copied().collect(),
            None => g.iter().map(|v| v * step_cap).collect(),
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let cand: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let fc = f(&cand);
            if fc > fz {
                z = cand;
                fz = fc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            step_cap *= 0.1;
            if step_cap < 1e-12 {
                break;
            }
        }
    }
    let neg_h = -fd_hessian(&f, &z, 1e-4);
    let sd = match neg_h.try_inverse().filter(|inv| (0..d).all(|i| inv[(i, i)] > 0.0)) {
        Some(inv) => (0..d).map(|i| inv[(i, i)].sqrt()).collect(),
        None => vec![1.0; d],
    };
    let sd = sd.into_iter().map(|s: f64| if s.is_finite() { s } else { 1.0 }).collect();
    (z, sd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    Trapezoid,
}

/// A tensor-product grid of `nodes[k]` equally spaced points on each range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub ranges: Vec<(f64, f64)>,
    pub nodes: Vec<usize>,
    pub rule: QuadratureRule,
}

impl QuadratureGrid {
    pub fn new(ranges: Vec<(f64, f64)>, nodes: Vec<usize>) -> Result<Self> {
        check_dim(ranges.len(), nodes.len())?;
        if ranges.is_empty() || ranges.len() > MAX_QUAD_DIM {
            return Err(Error::invalid(format!(
                "quadrature supports 1 to {MAX_QUAD_DIM} dimensions, got {}",
                ranges.len()
            )));
        }
        if nodes.iter().any(|&n| n < MIN_NODES) {
            return Err(Error::invalid(format!("need at least {MIN_NODES} nodes per dimension")));
        }
        if ranges.iter().any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::invalid("quadrature ranges must be finite with lo < hi"));
        }
        Ok(Self {
            ranges,
            nodes,
            rule: QuadratureRule::Trapezoid,
        })
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn num_points(&self) -> usize {
        self.nodes.iter().product()
    }

    fn spacing(&self, k: usize) -> f64 {
        let (a, b) = self.ranges[k];
        (b - a) / (self.nodes[k] - 1) as f64
    }

    /// Point, log trapezoid weight and whether it lies on the boundary.
    fn point(&self, mut idx: usize) -> (Vec<f64>, f64, bool) {
        let d = self.dim();
        let mut z = vec![0.0; d];
        let mut lw = 0.0;
        let mut boundary = false;
        for k in 0..d {
            let n = self.nodes[k];
            let i = idx % n;
            idx /= n;
            let h = self.spacing(k);
            z[k] = self.ranges[k].0 + i as f64 * h;
            let edge = i == 0 || i == n - 1;
            boundary |= edge;
            lw += if edge { (0.5 * h).ln() } else { h.ln() };
        }
        (z, lw, boundary)
    }

    /// Nested refinement: halves the spacing.
    pub fn refined(&self) -> Self {
        Self {
            ranges: self.ranges.clone(),
            nodes: self.nodes.iter().map(|n| 2 * (n - 1) + 1).collect(),
            rule: self.rule,
        }
    }

    /// Scales every half-width by `factor`, keeping the spacing.
    pub fn widened(&self, factor: f64) -> Self {
        let ranges: Vec<(f64, f64)> = self
            .ranges
            .iter()
            .map(|(a, b)| {
                let c = 0.5 * (a + b);
                let r = 0.5 * (b - a) * factor;
                (c - r, c + r)
            })
            .collect();
        let nodes = self
            .nodes
            .iter()
            .map(|n| (((n - 1) as f64 * factor).round() as usize + 1).max(MIN_NODES))
            .collect();
        Self {
            ranges,
            nodes,
            rule: self.rule,
        }
    }

    /// Union of `mode ± width · sd` over the given densities.
    pub fn covering(densities: &[&dyn LogDensity], width_sds: f64, nodes: usize) -> Result<Self> {
        let d = densities
            .first()
            .ok_or_else(|| Error::invalid("no densities to cover"))?
            .dim();
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for p in densities {
            check_dim(d, p.dim())?;
            let (mode, sd) = p.location();
            for k in 0..d {
                ranges[k].0 = ranges[k].0.min(mode[k] - width_sds * sd[k]);
                ranges[k].1 = ranges[k].1.max(mode[k] + width_sds * sd[k]);
            }
        }
        Self::new(ranges, vec![nodes.max(MIN_NODES); d])
    }
}

/// One pass of the grid: `∫ e^{a(z)} g(z) dz` with `(a, g) = f(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Pass {
    /// `log ∫ e^{a}`.
    pub log_mass: f64,
    /// `∫ e^{a} g`.
    pub value: f64,
    /// Fraction of `∫ e^{a}` carried by boundary nodes.
    pub boundary_fraction: f64,
}

pub(crate) fn evaluate(grid: &QuadratureGrid, f: &(dyn Fn(&[f64]) -> (f64, f64) + Sync)) -> Pass {
    let pts: Vec<(f64, f64, bool)> = (0..grid.num_points())
        .into_par_iter()
        .map(|i| {
            let (z, lw, b) = grid.point(i);
            let (a, g) = f(&z);
            let a = if a.is_nan() { f64::NEG_INFINITY } else { a };
            (lw + a, g, b)
        })
        .collect();
    let logs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let log_mass = log_sum_exp(&logs);
    let boundary: Vec<f64> = pts.iter().filter(|p| p.2).map(|p| p.0).collect();
    let boundary_fraction = (log_sum_exp(&boundary) - log_mass).exp();
    let terms: Vec<f64> = if log_mass.is_finite() {
        pts.iter()
            .map(|p| if p.0 == f64::NEG_INFINITY { 0.0 } else { (p.0 - log_mass).exp() * p.1 })
            .collect()
    } else {
        vec![0.0]
    };
    Pass {
        log_mass,
        value: pairwise_sum(&terms) * log_mass.exp(),
        boundary_fraction,
    }
}

/// Refinement and coverage policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Quadrature {
    pub width_sds: f64,
    pub initial_nodes: usize,
    pub tolerance: f64,
    pub max_refinements: usize,
    pub max_widenings: usize,
    pub coverage_tolerance: f64,
    pub max_points: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            width_sds: 10.0,
            initial_nodes: 64,
            tolerance: 1e-6,
            max_refinements: 6,
            max_widenings: 3,
            coverage_tolerance: 1e-8,
            max_points: 4_000_000,
        }
    }
}

/// Result of an integral that may diverge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Integral {
    Finite(Pass),
    Infinite,
}

/// Quantity a driver watches for convergence.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Watch {
    LogMass,
    Value,
}

impl Quadrature {
    fn watched(p: &Pass, watch: Watch) -> f64 {
        match watch {
            Watch::LogMass => p.log_mass,
            Watch::Value => p.value,
        }
    }

    fn refine(&self, start: &QuadratureGrid, f: &(dyn Fn(&[f64]) -> (f64, f64) + Sync), watch: Watch) -> Result<Pass> {
        let mut grid = start.clone();
        let mut prev = evaluate(&grid, f);
        let mut last_pair = (f64::NAN, Self::watched(&prev, watch));
        for _ in 0..self.max_refinements {
            let next = grid.refined();
            if next.num_points() > self.max_points {
                break;
            }
            grid = next;
            let cur = evaluate(&grid, f);
            let (a, b) = (Self::watched(&prev, watch), Self::watched(&cur, watch));
            let scale = match watch {
                Watch::LogMass => 1.0,
                Watch::Value => b.abs().max(1.0),
            };
            if (a - b).abs() <= self.tolerance * scale || (a == b) {
                return Ok(cur);
            }
            last_pair = (a, b);
            prev = cur;
        }
        Err(Error::QuadratureNonConvergence {
            previous: last_pair.0,
            last: last_pair.1,
        })
    }

    /// Integrates on `start`, widening while the boundary carries mass.
    ///
    /// Coverage is judged on the unrefined grid of each width; only a covering
    /// grid is refined to convergence.
    pub(crate) fn integrate(
        &self,
        start: &QuadratureGrid,
        f: &(dyn Fn(&[f64]) -> (f64, f64) + Sync),
        watch: Watch,
    ) -> Result<Integral> {
        let mut masses = Vec::new();
        let mut boundary = f64::NAN;
        for w in 0..=self.max_widenings {
            let grid = start.widened(2f64.powi(w as i32));
            let coarse = evaluate(&grid, f);
            if coarse.log_mass == f64::INFINITY {
                return Ok(Integral::Infinite);
            }
            if coarse.boundary_fraction <= self.coverage_tolerance {
                return self.refine(&grid, f, watch).map(Integral::Finite);
            }
            masses.push(coarse.log_mass);
            boundary = coarse.boundary_fraction;
        }
        // Mass that keeps growing as the grid widens means a divergent integral.
        if masses.windows(2).all(|m| m[1] - m[0] > 1e-3) {
            return Ok(Integral::Infinite);
        }
        Err(Error::Coverage {
            boundary_mass: boundary,
        })
    }

    pub(crate) fn integrate_finite(
        &self,
        start: &QuadratureGrid,
        f: &(dyn Fn(&[f64]) -> (f64, f64) + Sync),
        watch: Watch,
    ) -> Result<Pass> {
        match self.integrate(start, f, watch)? {
            Integral::Finite(p) => Ok(p),
            Integral::Infinite => Err(Error::Coverage {
                boundary_mass: f64::INFINITY,
            }),
        }
    }

    pub(crate) fn grid_for(&self, densities: &[&dyn LogDensity]) -> Result<QuadratureGrid> {
        let d = densities.first().map(|p| p.dim()).unwrap_or(0);
        if d == 0 || d > MAX_QUAD_DIM {
            return Err(Error::invalid(format!(
                "quadrature oracle supports 1 to {MAX_QUAD_DIM} latent dimensions, got {d}"
            )));
        }
        QuadratureGrid::covering(densities, self.width_sds, self.initial_nodes)
    }

    /// `log ∫ p(z) dz`; zero for densities that are already normalized.
    pub fn log_normalizer(&self, p: &dyn LogDensity) -> Result<f64> {
        if p.is_normalized() {
            return Ok(0.0);
        }
        let grid = self.grid_for(&[p])?;
        let pass = self.integrate_finite(&grid, &|z| (p.log_density(z), 1.0), Watch::LogMass)?;
        Ok(pass.log_mass)
    }
}
