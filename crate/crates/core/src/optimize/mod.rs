//! CHIVI and KLVI training loops.
//!
//! A fit is a sequential stochastic-approximation loop. Step `t` draws its
//! gradient noise from stream `(seed, OPTIMIZE, t)` and its minibatch from
//! `(seed, SUBSAMPLE, t)`; monitoring uses `(seed, MONITOR, t)`, so traces do
//! not reuse the optimization draws.

mod sandwich;
mod schedule;
mod trace;

pub use sandwich::{sandwich_run, SandwichResult};
pub use schedule::{step_size, Schedule, ScheduleKind};
pub use trace::{write_gap_csv, GapRow, SandwichTrace, TraceRow};

use std::time::Instant;

use log::{debug, warn};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::bounds::{compute_log_weights, cubo_estimate, elbo_estimate};
use crate::error::{check_dim, Error, Result};
use crate::gradients::{estimate, EstimatorKind};
use crate::model::{Model, Subsample};
use crate::rng::{purpose, NoiseStream};
use crate::variational::{Family, VariationalParams};
use schedule::Stepper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Zero,
    /// Zero plus `N(0, 0.1²)` noise on every parameter.
    SeededRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Convergence {
    pub window: usize,
    pub tolerance: f64,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            window: 20,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Divergence order.
    pub n: f64,
    /// Draws per gradient step (`S`).
    pub samples: usize,
    /// Minibatch size `M`; `None` uses every datum.
    pub minibatch: Option<usize>,
    pub max_iters: usize,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub family: Family,
    pub schedule: Schedule,
    pub init: Init,
    /// Starting log-scale of every latent dimension, before any `init` noise.
    pub init_log_scale: f64,
    pub convergence: Convergence,
    pub monitor_samples: usize,
    pub trace_every: usize,
    pub log_scale_bounds: (f64, f64),
    /// Divergence guard on the gradient norm.
    pub max_grad_norm: f64,
    /// Divergence guard on any parameter's magnitude.
    pub max_abs_param: f64,
    pub checkpoint_every: Option<usize>,
    /// Horizon `H` of the iterate average `λ̄ ← λ̄ + (λ - λ̄)/H` that is
    /// monitored and returned; 0 or 1 returns the raw iterate.
    pub averaging_window: usize,
    /// Horizon of the running reference for `n · max log w`. Each CHIVI step
    /// is rescaled from its own max-shift to this reference; 0 keeps the raw
    /// per-step shift.
    pub shift_window: usize,
    /// Fill `wall_ms` in the trace (makes traces run-dependent).
    pub record_wall_time: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n: 2.0,
            samples: 32,
            minibatch: None,
            max_iters: 2000,
            seed: 0,
            estimator: EstimatorKind::Reparam,
            family: Family::MeanField,
            schedule: Schedule::default(),
            init: Init::Zero,
            init_log_scale: 0.0,
            convergence: Convergence::default(),
            monitor_samples: 1000,
            trace_every: 10,
            log_scale_bounds: (-10.0, 5.0),
            max_grad_norm: 1e12,
            max_abs_param: 1e6,
            checkpoint_every: None,
            averaging_window: 100,
            shift_window: 100,
            record_wall_time: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n > 1.0 && self.n <= 4.0) {
            return Err(Error::invalid(format!("n must lie in (1, 4], got {}", self.n)));
        }
        if self.samples == 0 || self.monitor_samples == 0 {
            return Err(Error::invalid("samples and monitor_samples must be at least 1"));
        }
        if self.minibatch == Some(0) {
            return Err(Error::invalid("minibatch must be at least 1"));
        }
        if self.trace_every == 0 {
            return Err(Error::invalid("trace_every must be at least 1"));
        }
        if self.convergence.window == 0 || !(self.convergence.tolerance >= 0.0) {
            return Err(Error::invalid("convergence needs window >= 1 and tolerance >= 0"));
        }
        let (lo, hi) = self.log_scale_bounds;
        if !(lo < hi) {
            return Err(Error::invalid("log_scale_bounds must satisfy lo < hi"));
        }
        if !(self.init_log_scale >= lo && self.init_log_scale <= hi) {
            return Err(Error::invalid(format!(
                "init_log_scale {} lies outside log_scale_bounds ({lo}, {hi})",
                self.init_log_scale
            )));
        }
        if self.estimator == EstimatorKind::ElboReparam {
            return Err(Error::invalid(
                "estimator elbo_reparam is the KLVI objective; use klvi_fit",
            ));
        }
        self.schedule.validate()
    }

    fn check_model(&self, model: &dyn Model) -> Result<()> {
        if let Some(m) = self.minibatch {
            if m > model.data_count() {
                return Err(Error::invalid(format!(
                    "minibatch {m} exceeds the {} data points",
                    model.data_count()
                )));
            }
        }
        Ok(())
    }
}

/// Largest log-factor applied when moving a step to the reference shift.
const MAX_RESCALE: f64 = 10.0;

/// Starting parameters for `cfg.init` and `cfg.family`.
pub fn initial_params(dim: usize, cfg: &OptimizerConfig) -> VariationalParams {
    let mut p = VariationalParams::standard(dim, cfg.family);
    if cfg.init == Init::SeededRandom {
        let noise = NoiseStream::with_purpose(cfg.seed, purpose::INIT, 0).draw(0, p.num_params());
        let flat: Vec<f64> = noise.eps.iter().map(|e| 0.1 * e).collect();
        p.set_flat(&flat).expect("length matches");
    }
    for s in &mut p.log_scale {
        *s += cfg.init_log_scale;
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Minimize `exp(n · CUBO_n)`.
    Chivi,
    /// Maximize the ELBO.
    Klvi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StopReason {
    MaxIters,
    Converged,
    Diverged { iteration: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: VariationalParams,
    pub trace: SandwichTrace,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations_run: usize,
    pub clamp_hits: usize,
    pub wall_ms: f64,
}

/// Called with `(iteration, params)` every `checkpoint_every` steps.
pub trait FitObserver {
    fn checkpoint(&mut self, iteration: usize, params: &VariationalParams) -> Result<()>;
}

impl<F: FnMut(usize, &VariationalParams) -> Result<()>> FitObserver for F {
    fn checkpoint(&mut self, iteration: usize, params: &VariationalParams) -> Result<()> {
        self(iteration, params)
    }
}

/// CHIVI with a fresh uniform minibatch of size `cfg.minibatch` per step.
pub fn chivi_fit(model: &dyn Model, init: &VariationalParams, cfg: &OptimizerConfig) -> Result<FitResult> {
    fit(model, init, cfg, Objective::Chivi, None)
}

/// CHIVI on the full dataset every step, whatever `cfg.minibatch` says.
pub fn chivi_fit_full(model: &dyn Model, init: &VariationalParams, cfg: &OptimizerConfig) -> Result<FitResult> {
    let cfg = OptimizerConfig {
        minibatch: None,
        ..cfg.clone()
    };
    fit(model, init, &cfg, Objective::Chivi, None)
}

/// Reparameterized ELBO ascent with the same schedule and monitoring.
pub fn klvi_fit(model: &dyn Model, init: &VariationalParams, cfg: &OptimizerConfig) -> Result<FitResult> {
    fit(model, init, cfg, Objective::Klvi, None)
}

fn window_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Relative change between the last two windows of `values`.
fn window_change(values: &[f64], w: usize) -> Option<f64> {
    if values.len() < 2 * w {
        return None;
    }
    let k = values.len();
    let recent = window_mean(&values[k - w..]);
    let before = window_mean(&values[k - 2 * w..k - w]);
    Some((recent - before).abs() / before.abs().max(1.0))
}

struct Monitor<'a> {
    model: &'a dyn Model,
    cfg: &'a OptimizerConfig,
}

impl Monitor<'_> {
    fn row(&self, iteration: usize, params: &VariationalParams, grad_norm: f64, lsc: f64, wall_ms: f64) -> Result<TraceRow> {
        let stream = NoiseStream::with_purpose(self.cfg.seed, purpose::MONITOR, iteration as u64);
        let lw = compute_log_weights(self.model, params, self.cfg.monitor_samples, None, stream)?;
        let cubo = cubo_estimate(&lw, self.cfg.n)?;
        let elbo = elbo_estimate(&lw);
        Ok(TraceRow {
            iteration,
            elbo: elbo.value,
            cubo: cubo.value,
            n: self.cfg.n,
            samples: self.cfg.monitor_samples,
            elbo_se: elbo.std_error,
            cubo_se: cubo.std_error,
            grad_norm,
            log_scale_correction: lsc,
            wall_ms: if self.cfg.record_wall_time { wall_ms } else { 0.0 },
        })
    }
}

/// The shared training loop behind [`chivi_fit`] and [`klvi_fit`].
pub fn fit(
    model: &dyn Model,
    init: &VariationalParams,
    cfg: &OptimizerConfig,
    objective: Objective,
    mut observer: Option<&mut dyn FitObserver>,
) -> Result<FitResult> {
    cfg.validate()?;
    cfg.check_model(model)?;
    check_dim(model.latent_dim(), init.dim())?;
    init.validate()?;

    let start = Instant::now();
    let elapsed = || start.elapsed().as_secs_f64() * 1e3;
    let monitor = Monitor { model, cfg };
    let n_data = model.data_count();
    let minibatch = cfg.minibatch.filter(|&m| m < n_data);
    let (lo, hi) = cfg.log_scale_bounds;

    let mut params = init.clone();
    let mut average = init.clone();
    let horizon = cfg.averaging_window.max(1) as f64;
    let mut stepper = Stepper::new(cfg.schedule, params.num_params());
    let mut trace = SandwichTrace::default();
    let mut watched = Vec::new();
    let mut clamp_hits = 0;
    let mut stop_reason = StopReason::MaxIters;
    let mut iterations_run = 0;
    let mut last = (f64::NAN, f64::NAN);
    let mut shift: Option<f64> = None;

    for t in 0..cfg.max_iters {
        let step = (|| -> Result<(f64, f64)> {
            let subsample = match minibatch {
                Some(m) => {
                    let mut rng = NoiseStream::with_purpose(cfg.seed, purpose::SUBSAMPLE, 0).rng(t as u64);
                    Some(Subsample::new(sample(&mut rng, n_data, m).into_vec(), n_data)?)
                }
                None => None,
            };
            let stream = NoiseStream::with_purpose(cfg.seed, purpose::OPTIMIZE, t as u64);
            let kind = match objective {
                Objective::Chivi => cfg.estimator,
                Objective::Klvi => EstimatorKind::ElboReparam,
            };
            let mut g = estimate(kind, model, &params, cfg.n, cfg.samples, subsample.as_ref(), stream)?;
            if objective == Objective::Chivi && cfg.shift_window > 0 {
                let lsc = g.log_scale_correction;
                let reference = *shift.get_or_insert(lsc);
                let factor = (lsc - reference).clamp(-MAX_RESCALE, MAX_RESCALE).exp();
                for v in &mut g.grad {
                    *v *= factor;
                }
                shift = Some(reference + (lsc - reference) / cfg.shift_window as f64);
            }
            let norm = g.norm();
            if !(norm <= cfg.max_grad_norm) {
                return Err(Error::invalid(format!(
                    "gradient norm {norm:e} exceeds max_grad_norm {:e}",
                    cfg.max_grad_norm
                )));
            }
            let delta = stepper.step(&g.grad);
            let mut flat = params.to_flat();
            let sign = match objective {
                Objective::Chivi => 1.0,
                Objective::Klvi => -1.0,
            };
            for (p, d) in flat.iter_mut().zip(&delta) {
                *p += sign * d;
            }
            if let Some(k) = flat.iter().position(|p| !(p.abs() <= cfg.max_abs_param)) {
                return Err(Error::invalid(format!(
                    "parameter {k} = {:e} exceeds max_abs_param {:e}",
                    flat[k], cfg.max_abs_param
                )));
            }
            params.set_flat(&flat)?;
            Ok((norm, g.log_scale_correction))
        })();

        match step {
            Ok(v) => last = v,
            Err(e) => {
                warn!("fit diverged at iteration {t}: {e}");
                stop_reason = StopReason::Diverged {
                    iteration: t,
                    message: e.to_string(),
                };
                break;
            }
        }
        let hits = params.clamp_log_scale(lo, hi);
        if hits > 0 {
            debug!("iteration {t}: {hits} log-scale entries clamped to [{lo}, {hi}]");
            clamp_hits += hits;
        }
        iterations_run = t + 1;
        if horizon > 1.0 {
            let cur = params.to_flat();
            let mut avg = average.to_flat();
            for (a, c) in avg.iter_mut().zip(&cur) {
                *a += (c - *a) / horizon;
            }
            average.set_flat(&avg)?;
        } else {
            average.clone_from(&params);
        }

        if let (Some(every), Some(obs)) = (cfg.checkpoint_every, observer.as_deref_mut()) {
            if every > 0 && iterations_run % every == 0 {
                obs.checkpoint(iterations_run, &average)?;
            }
        }

        if iterations_run % cfg.trace_every == 0 {
            match monitor.row(iterations_run, &average, last.0, last.1, elapsed()) {
                Ok(row) => {
                    watched.push(match objective {
                        Objective::Chivi => row.cubo,
                        Objective::Klvi => row.elbo,
                    });
                    trace.rows.push(row);
                }
                Err(e) => {
                    stop_reason = StopReason::Diverged {
                        iteration: t,
                        message: e.to_string(),
                    };
                    break;
                }
            }
            if let Some(change) = window_change(&watched, cfg.convergence.window) {
                if change < cfg.convergence.tolerance {
                    stop_reason = StopReason::Converged;
                    break;
                }
            }
        }
    }

    let needs_final_row = iterations_run > 0
        && !matches!(stop_reason, StopReason::Diverged { .. })
        && trace.last().map(|r| r.iteration) != Some(iterations_run);
    if needs_final_row {
        trace
            .rows
            .push(monitor.row(iterations_run, &average, last.0, last.1, elapsed())?);
    }

    Ok(FitResult {
        params: average,
        trace,
        converged: stop_reason == StopReason::Converged,
        stop_reason,
        iterations_run,
        clamp_hits,
        wall_ms: elapsed(),
    })
}
