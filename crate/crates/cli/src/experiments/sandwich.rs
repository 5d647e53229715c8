//! Sandwich run: CHIVI's CUBO and KLVI's ELBO bracketing `log p(x)`.

use std::fs::File;
use std::path::Path;

use anyhow::{bail, Result};
use chivi::model::{make_conjugate_gaussian, make_cox_process, make_probit};
use chivi::optimize::{initial_params, sandwich_run, write_gap_csv, SandwichResult};
use chivi::oracle::{quad_evidence, OracleCache, OracleMethod, OracleResult, MAX_QUAD_DIM};
use chivi::Model;
use serde_json::json;

use super::cox::build_grid;
use super::with_seed;
use crate::config::{DataSource, ModelSpec, RunConfig};
use crate::data::load;
use crate::table::ResultTable;

/// A model built from its config section, with the exact evidence when the
/// model has one in closed form.
pub struct BuiltModel {
    pub name: String,
    pub model: Box<dyn Model>,
    pub exact_log_evidence: Option<f64>,
}

fn standardized(data: &DataSource, standardize: bool) -> Result<chivi::Dataset> {
    let ds = load(data)?;
    Ok(if standardize {
        ds.standardized(&ds.fit_standardization())
    } else {
        ds
    })
}

pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<BuiltModel> {
    Ok(match spec {
        ModelSpec::ConjugateGaussian {
            prior_mean,
            prior_var,
            noise_var,
            data,
        } => {
            let m = make_conjugate_gaussian(prior_mean.clone(), prior_var.clone(), *noise_var, data.clone())?;
            BuiltModel {
                name: "conjugate_gaussian".into(),
                exact_log_evidence: Some(m.log_evidence()),
                model: Box::new(m),
            }
        }
        ModelSpec::Probit {
            data,
            prior_var,
            intercept,
            standardize,
        } => BuiltModel {
            name: data.name(),
            model: Box::new(make_probit(&standardized(data, *standardize)?, *prior_var, *intercept)?),
            exact_log_evidence: None,
        },
        ModelSpec::GpClassification { .. } => {
            bail!("gp_classification needs kernel hyperparameters; use the gp_bench experiment")
        }
        ModelSpec::Cox { source, kernel } => {
            let (grid, _) = build_grid(source, kernel, seed)?;
            BuiltModel {
                name: "cox".into(),
                model: Box::new(make_cox_process(grid, *kernel)?),
                exact_log_evidence: None,
            }
        }
    })
}

/// Quadrature evidence for `D <= 3`, cached when the config names a cache.
fn reference_evidence(cfg: &RunConfig, built: &BuiltModel) -> Result<Option<f64>> {
    if built.exact_log_evidence.is_some() {
        return Ok(built.exact_log_evidence);
    }
    if cfg.oracle.method != OracleMethod::Quadrature || built.model.latent_dim() > MAX_QUAD_DIM {
        return Ok(None);
    }
    let compute = || -> chivi::Result<OracleResult> {
        Ok(OracleResult {
            log_evidence: Some(quad_evidence(built.model.as_ref(), &cfg.oracle.quadrature)?),
            ..OracleResult::default()
        })
    };
    let result = match &cfg.oracle.cache_dir {
        Some(dir) => OracleCache::new(dir).get_or_compute(&(&cfg.model, &cfg.oracle.quadrature, cfg.seed), compute)?,
        None => compute()?,
    };
    Ok(result.log_evidence)
}

pub struct SandwichOutcome {
    pub name: String,
    pub result: SandwichResult,
    pub log_evidence: Option<f64>,
    pub table: ResultTable,
}

pub fn execute(cfg: &RunConfig) -> Result<SandwichOutcome> {
    let Some(spec) = &cfg.model else {
        bail!("sandwich needs a model section");
    };
    let built = build_model(spec, cfg.seed)?;
    let opt = with_seed(&cfg.optimizer, cfg.seed);
    let init = initial_params(built.model.latent_dim(), &opt);
    let klvi = with_seed(cfg.klvi_settings(), cfg.seed);
    let result = sandwich_run(built.model.as_ref(), &init, &opt, &klvi)?;
    let log_evidence = reference_evidence(cfg, &built)?;

    let mut table = ResultTable::default();
    if let Some(last) = result.final_gap() {
        table.push(&built.name, "chivi", "cubo", &[last.cubo])?;
        table.push(&built.name, "klvi", "elbo", &[last.elbo])?;
        table.push(&built.name, "sandwich", "gap", &[last.gap])?;
    }
    if let Some(lz) = log_evidence {
        table.push(&built.name, "reference", "log_evidence", &[lz])?;
    }
    Ok(SandwichOutcome {
        name: built.name,
        result,
        log_evidence,
        table,
    })
}

pub fn write(outcome: &SandwichOutcome, dir: &Path) -> Result<serde_json::Value> {
    let r = &outcome.result;
    write_gap_csv(&r.gap_trace, File::create(dir.join("trace.csv"))?)?;
    r.chivi.trace.write_csv(File::create(dir.join("chivi_trace.csv"))?)?;
    r.klvi.trace.write_csv(File::create(dir.join("klvi_trace.csv"))?)?;
    std::fs::write(dir.join("chivi_params.json"), serde_json::to_vec_pretty(&r.chivi.params)?)?;
    std::fs::write(dir.join("klvi_params.json"), serde_json::to_vec_pretty(&r.klvi.params)?)?;
    outcome.table.write(dir, "sandwich")?;
    let last = r.final_gap();
    let bracketed = match (last, outcome.log_evidence) {
        (Some(g), Some(lz)) => Some(g.elbo - 3.0 * g.joint_se <= lz && lz <= g.cubo + 3.0 * g.joint_se),
        _ => None,
    };
    Ok(json!({
        "model": outcome.name,
        "final": last,
        "log_evidence": outcome.log_evidence,
        "bracketed": bracketed,
        "chivi_stop": r.chivi.stop_reason,
        "klvi_stop": r.klvi.stop_reason,
        "chivi_iterations": r.chivi.iterations_run,
        "klvi_iterations": r.klvi.iterations_run,
    }))
}
