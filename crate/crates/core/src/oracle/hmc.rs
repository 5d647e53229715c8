//! Plain leapfrog HMC with a diagonal mass matrix estimated during burn-in.

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{OracleDiagnostics, OracleMethod, OracleResult};
use crate::error::{check_dim, Error, Result};
use crate::model::{log_joint_and_grad, Model};
use crate::rng::{purpose, NoiseStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    /// Total iterations per chain, burn-in included.
    pub num_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
    /// Each iteration uses `step_size · U(1 - j, 1 + j)`.
    pub step_jitter: f64,
    /// Estimate a diagonal mass matrix from the second half of burn-in.
    pub adapt_mass: bool,
    pub init: Option<Vec<f64>>,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            leapfrog_steps: 20,
            num_samples: 4000,
            burn_in: 1000,
            seed: 0,
            chains: 4,
            step_jitter: 0.2,
            adapt_mass: true,
            init: None,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("HMC step_size must be > 0"));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::invalid("HMC leapfrog_steps must be >= 1"));
        }
        if self.num_samples <= self.burn_in {
            return Err(Error::invalid("HMC num_samples must exceed burn_in"));
        }
        if self.chains == 0 {
            return Err(Error::invalid("HMC needs at least one chain"));
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return Err(Error::invalid("HMC step_jitter must lie in [0, 1)"));
        }
        Ok(())
    }
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    accepted: usize,
    proposals: usize,
}

fn potential(model: &dyn Model, z: &[f64]) -> Option<(f64, Vec<f64>)> {
    match log_joint_and_grad(model, z, None) {
        Ok((lp, g)) if lp.is_finite() && g.iter().all(|v| v.is_finite()) => Some((-lp, g)),
        _ => None,
    }
}

fn run_chain(model: &dyn Model, cfg: &HmcConfig, chain: usize) -> Result<ChainOutput> {
    let d = model.latent_dim();
    let mut rng = NoiseStream::with_purpose(cfg.seed, purpose::HMC, chain as u64).rng(0);
    let mut z = cfg.init.clone().unwrap_or_else(|| vec![0.0; d]);
    let (mut u, mut grad) = potential(model, &z)
        .ok_or_else(|| Error::invalid("HMC initial point is outside the model support"))?;
    let mut inv_mass = vec![1.0; d];
    let adapt_from = cfg.burn_in / 2;
    let mut warm: Vec<Vec<f64>> = Vec::new();
    let mut draws = Vec::with_capacity(cfg.num_samples - cfg.burn_in);
    let (mut accepted, mut proposals) = (0, 0);

    for it in 0..cfg.num_samples {
        if cfg.adapt_mass && it == cfg.burn_in && warm.len() > 10 {
            for k in 0..d {
                let col: Vec<f64> = warm.iter().map(|w| w[k]).collect();
                let var = crate::special::mean_and_var(&col).1;
                if var.is_finite() && var > 0.0 {
                    inv_mass[k] = var;
                }
            }
        }
        let eps = cfg.step_size * (1.0 + cfg.step_jitter * (2.0 * rng.random::<f64>() - 1.0));
        let mut p: Vec<f64> = (0..d)
            .map(|k| rng.sample::<f64, _>(StandardNormal) / inv_mass[k].sqrt())
            .collect();
        let kinetic = |p: &[f64]| 0.5 * p.iter().zip(&inv_mass).map(|(a, m)| a * a * m).sum::<f64>();
        let h0 = u + kinetic(&p);

        let mut zn = z.clone();
        let mut gn = grad.clone();
        let mut un = u;
        let mut ok = true;
        // grad is ∇ log p, so the force is +grad
        for k in 0..d {
            p[k] += 0.5 * eps * gn[k];
        }
        for step in 0..cfg.leapfrog_steps {
            for k in 0..d {
                zn[k] += eps * inv_mass[k] * p[k];
            }
            match potential(model, &zn) {
                Some((uu, g)) => {
                    un = uu;
                    gn = g;
                }
                None => {
                    ok = false;
                    break;
                }
            }
            let scale = if step + 1 == cfg.leapfrog_steps { 0.5 } else { 1.0 };
            for k in 0..d {
                p[k] += scale * eps * gn[k];
            }
        }
        proposals += 1;
        let accept = ok && {
            let h1 = un + kinetic(&p);
            let log_ratio = h0 - h1;
            log_ratio.is_finite() && rng.random::<f64>().ln() < log_ratio
        };
        if accept {
            z = zn;
            u = un;
            grad = gn;
            accepted += 1;
        }
        if it >= adapt_from && it < cfg.burn_in {
            warm.push(z.clone());
        }
        if it >= cfg.burn_in {
            draws.push(z.clone());
        }
    }
    Ok(ChainOutput {
        draws,
        accepted,
        proposals,
    })
}

/// Standard error of a chain average by non-overlapping batch means.
fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let batches = ((n as f64).sqrt() as usize).clamp(2, 50).min(n);
    let size = n / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    (crate::special::mean_and_var(&means).1 / batches as f64).sqrt()
}

/// Posterior mean and sd of `model` from `cfg.chains` independent chains.
pub fn hmc_sample(model: &dyn Model, cfg: &HmcConfig) -> Result<OracleResult> {
    cfg.validate()?;
    let d = model.latent_dim();
    if let Some(init) = &cfg.init {
        check_dim(d, init.len())?;
    }
    let chains: Vec<ChainOutput> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(model, cfg, c))
        .collect::<Result<_>>()?;
    let accepted: usize = chains.iter().map(|c| c.accepted).sum();
    let proposals: usize = chains.iter().map(|c| c.proposals).sum();
    if accepted == 0 {
        return Err(Error::HmcAllRejected {
            step_size: cfg.step_size,
        });
    }
    let rate = accepted as f64 / proposals as f64;
    if !(0.5..=0.95).contains(&rate) {
        warn!("HMC acceptance rate {rate:.3} is outside [0.5, 0.95]");
    }

    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    let mut mean_se = vec![0.0; d];
    let mut sd_se = vec![0.0; d];
    for k in 0..d {
        let all: Vec<f64> = chains.iter().flat_map(|c| c.draws.iter().map(move |z| z[k])).collect();
        let (m, v) = crate::special::mean_and_var(&all);
        mean[k] = m;
        sd[k] = v.sqrt();
        // chains are independent: combine per-chain batch-means variances
        let (mut var_m, mut var_s) = (0.0, 0.0);
        for c in &chains {
            let xs: Vec<f64> = c.draws.iter().map(|z| z[k]).collect();
            let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
            var_m += batch_means_se(&xs).powi(2);
            var_s += batch_means_se(&sq).powi(2);
        }
        let nc = chains.len() as f64;
        mean_se[k] = var_m.sqrt() / nc;
        // delta method: se(sd) = se(var) / (2 sd)
        sd_se[k] = var_s.sqrt() / nc / (2.0 * sd[k].max(1e-300));
    }
    Ok(OracleResult {
        method: OracleMethod::Hmc,
        log_evidence: None,
        posterior_mean: mean,
        posterior_sd: sd,
        divergences: Vec::new(),
        diagnostics: OracleDiagnostics {
            acceptance_rate: Some(rate),
            posterior_mean_se: Some(mean_se),
            posterior_sd_se: Some(sd_se),
            draws: proposals - cfg.chains * cfg.burn_in,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_conjugate_gaussian;

    #[test]
    fn conjugate_moments_within_mc_error() {
        let m = make_conjugate_gaussian(vec![0.0, 1.0], vec![1.0, 4.0], 0.5, vec![vec![0.3, 2.0], vec![0.8, 1.5]]).unwrap();
        let cfg = HmcConfig { step_size: 0.2, leapfrog_steps: 10, num_samples: 3000, burn_in: 500, ..HmcConfig::default() };
        let r = hmc_sample(&m, &cfg).unwrap();
        let post = m.posterior();
        let mse = r.diagnostics.posterior_mean_se.as_ref().unwrap();
        let sse = r.diagnostics.posterior_sd_se.as_ref().unwrap();
        for k in 0..2 {
            assert!((r.posterior_mean[k] - post.mean[k]).abs() < 3.0 * mse[k], "mean {k}");
            assert!((r.posterior_sd[k] - post.var[k].sqrt()).abs() < 3.0 * sse[k], "sd {k}");
        }
        let rate = r.diagnostics.acceptance_rate.unwrap();
        assert!(rate > 0.0 && rate < 1.0);
    }

    #[test]
    fn tiny_steps_accept_almost_everything() {
        let m = make_conjugate_gaussian(vec![0.0], vec![1.0], 1.0, vec![vec![0.5]]).unwrap();
        let cfg = HmcConfig { step_size: 1e-4, leapfrog_steps: 1, num_samples: 400, burn_in: 100, chains: 1, ..HmcConfig::default() };
        assert!(hmc_sample(&m, &cfg).unwrap().diagnostics.acceptance_rate.unwrap() > 0.999);
    }

    #[test]
    fn independent_chains_agree() {
        let m = make_conjugate_gaussian(vec![0.0], vec![2.0], 0.3, vec![vec![0.5], vec![-0.1], vec![0.9]]).unwrap();
        let base = HmcConfig { step_size: 0.15, leapfrog_steps: 8, num_samples: 3000, burn_in: 500, chains: 1, ..HmcConfig::default() };
        let a = hmc_sample(&m, &HmcConfig { seed: 1, ..base.clone() }).unwrap();
        let b = hmc_sample(&m, &HmcConfig { seed: 2, ..base }).unwrap();
        let sa = a.diagnostics.posterior_mean_se.unwrap()[0];
        let sb = b.diagnostics.posterior_mean_se.unwrap()[0];
        assert!((a.posterior_mean[0] - b.posterior_mean[0]).abs() < 3.0 * (sa * sa + sb * sb).sqrt());
    }

    #[test]
    fn huge_steps_are_all_rejected() {
        let m = make_conjugate_gaussian(vec![0.0], vec![1.0], 1e-6, vec![vec![0.5]; 50]).unwrap();
        let cfg = HmcConfig { step_size: 1e3, leapfrog_steps: 5, num_samples: 50, burn_in: 10, chains: 1, step_jitter: 0.0, adapt_mass: false, ..HmcConfig::default() };
        assert!(matches!(hmc_sample(&m, &cfg), Err(Error::HmcAllRejected { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(HmcConfig { num_samples: 10, burn_in: 10, ..HmcConfig::default() }.validate().is_err());
        assert!(HmcConfig { step_size: 0.0, ..HmcConfig::default() }.validate().is_err());
        assert!(HmcConfig { leapfrog_steps: 0, ..HmcConfig::default() }.validate().is_err());
    }
}
