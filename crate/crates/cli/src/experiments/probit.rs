//! Bayesian probit regression benchmark: test error over random splits.

use std::path::Path;

use anyhow::{bail, Result};
use chivi::model::{make_probit, Dataset, Probit};
use chivi::optimize::{chivi_fit, initial_params, klvi_fit};
use chivi::{FitResult, VariationalParams};
use log::info;
use rayon::prelude::*;
use serde_json::json;

use super::{label_from_probability, probit_predictive, scale_rows, with_seed, write_long_trace, TaggedTrace};
use crate::config::{ModelSpec, RunConfig};
use crate::data::{derived_seed, error_rate, load, train_test_split};
use crate::table::ResultTable;

pub struct RepeatResult {
    pub seed: u64,
    pub chivi_error: f64,
    pub klvi_error: f64,
    pub chivi: FitResult,
    pub klvi: FitResult,
}

pub struct ProbitOutcome {
    pub dataset: String,
    pub table: ResultTable,
    pub repeats: Vec<RepeatResult>,
}

/// Labels from the Gaussian-approximate predictive `Φ(xᵀμ / √(1 + xᵀΣx))`.
pub fn predict(model: &Probit, q: &VariationalParams, test: &Dataset) -> Result<Vec<f64>> {
    let rows = scale_rows(q)?;
    Ok((0..test.len())
        .map(|i| {
            let d = model.design_for(test.row(i));
            let mean: f64 = d.iter().zip(&q.mean).map(|(a, b)| a * b).sum();
            let var: f64 = rows
                .iter()
                .map(|r| r.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>().powi(2))
                .sum();
            label_from_probability(probit_predictive(mean, var))
        })
        .collect())
}

pub fn execute(cfg: &RunConfig) -> Result<ProbitOutcome> {
    let Some(ModelSpec::Probit {
        data,
        prior_var,
        intercept,
        standardize,
    }) = &cfg.model
    else {
        bail!("probit_bench needs a probit model section");
    };
    let ds = load(data)?;
    let name = data.name();
    info!("{name}: {} rows, {} features, {} repeats", ds.len(), ds.n_features(), cfg.splits.num_repeats);

    let repeats: Vec<RepeatResult> = (0..cfg.splits.num_repeats)
        .into_par_iter()
        .map(|r| -> Result<RepeatResult> {
            let seed = derived_seed(cfg.seed, r as u64);
            let (train_idx, test_idx) = train_test_split(&ds, cfg.splits.train_fraction, cfg.seed, r as u64);
            let (mut train, mut test) = (ds.subset(&train_idx), ds.subset(&test_idx));
            if *standardize {
                let st = train.fit_standardization();
                train = train.standardized(&st);
                test = test.standardized(&st);
            }
            let model = make_probit(&train, *prior_var, *intercept)?;
            let opt = with_seed(&cfg.optimizer, seed);
            let init = initial_params(chivi::Model::latent_dim(&model), &opt);
            let chivi = chivi_fit(&model, &init, &opt)?;
            let klvi = klvi_fit(&model, &init, &with_seed(cfg.klvi_settings(), seed))?;
            let chivi_error = error_rate(&predict(&model, &chivi.params, &test)?, test.labels());
            let klvi_error = error_rate(&predict(&model, &klvi.params, &test)?, test.labels());
            info!("{name} split {r}: chivi {chivi_error:.4}, klvi {klvi_error:.4}");
            Ok(RepeatResult {
                seed,
                chivi_error,
                klvi_error,
                chivi,
                klvi,
            })
        })
        .collect::<Result<_>>()?;

    let mut table = ResultTable::default();
    let chivi: Vec<f64> = repeats.iter().map(|r| r.chivi_error).collect();
    let klvi: Vec<f64> = repeats.iter().map(|r| r.klvi_error).collect();
    table.push(&name, "chivi", "test_error", &chivi)?;
    table.push(&name, "klvi", "test_error", &klvi)?;
    Ok(ProbitOutcome {
        dataset: name,
        table,
        repeats,
    })
}

pub fn write(outcome: &ProbitOutcome, dir: &Path) -> Result<serde_json::Value> {
    let mut traces = Vec::new();
    for (r, rep) in outcome.repeats.iter().enumerate() {
        traces.push(TaggedTrace {
            method: "chivi",
            repeat: r,
            trace: &rep.chivi.trace,
        });
        traces.push(TaggedTrace {
            method: "klvi",
            repeat: r,
            trace: &rep.klvi.trace,
        });
    }
    write_long_trace(&dir.join("trace.csv"), &traces)?;
    outcome.table.write(dir, "probit_error")?;
    Ok(json!({
        "dataset": outcome.dataset,
        "predictive": "gaussian_convolution",
        "table": outcome.table,
        "splits": outcome.repeats.iter().map(|r| json!({
            "seed": r.seed,
            "chivi_error": r.chivi_error,
            "klvi_error": r.klvi_error,
            "chivi_stop": r.chivi.stop_reason,
            "klvi_stop": r.klvi.stop_reason,
        })).collect::<Vec<_>>(),
    }))
}
