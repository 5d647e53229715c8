//! GP classification benchmark: k-fold CV with an inner kernel grid search.

use std::path::Path;

use anyhow::{bail, Result};
use chivi::model::{make_gp_classification, Dataset, GpClassification};
use chivi::optimize::{chivi_fit, initial_params, klvi_fit, Objective};
use chivi::{FitResult, KernelParams, OptimizerConfig};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{label_from_probability, probit_predictive, with_seed, write_long_trace, TaggedTrace};
use crate::config::{ModelSpec, RunConfig};
use crate::data::{derived_seed, error_rate, k_folds, load, train_test_split};
use crate::table::ResultTable;

const METHODS: [(&str, Objective); 2] = [("chivi", Objective::Chivi), ("klvi", Objective::Klvi)];

#[derive(Debug, Clone, Serialize)]
pub struct FoldChoice {
    pub method: &'static str,
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub holdout_error: f64,
    pub test_error: f64,
}

pub struct FoldResult {
    pub choices: Vec<FoldChoice>,
    pub fits: Vec<FitResult>,
}

pub struct GpOutcome {
    pub dataset: String,
    pub table: ResultTable,
    pub folds: Vec<FoldResult>,
}

fn inputs(ds: &Dataset) -> Vec<Vec<f64>> {
    (0..ds.len()).map(|i| ds.row(i).to_vec()).collect()
}

/// Labels from `Φ(m / √(1 + v))` with `(m, v)` the conditional GP latent at
/// the test inputs.
pub fn predict(model: &GpClassification, fit: &FitResult, test: &Dataset) -> Vec<f64> {
    let var: Vec<f64> = fit.params.marginal_sd().iter().map(|s| s * s).collect();
    model
        .predict_latent(&inputs(test), &fit.params.mean, &var)
        .into_iter()
        .map(|(m, v)| label_from_probability(probit_predictive(m, v)))
        .collect()
}

/// CHIVI and KLVI settings, in that order.
type Settings = (OptimizerConfig, OptimizerConfig);

fn fit(model: &GpClassification, opts: &Settings, objective: Objective, warm: bool) -> Result<FitResult> {
    let init = initial_params(chivi::Model::latent_dim(model), &opts.0);
    Ok(match objective {
        Objective::Chivi if warm => chivi_fit(model, &klvi_fit(model, &init, &opts.1)?.params, &opts.0)?,
        Objective::Chivi => chivi_fit(model, &init, &opts.0)?,
        Objective::Klvi => klvi_fit(model, &init, &opts.1)?,
    })
}

pub fn execute(cfg: &RunConfig) -> Result<GpOutcome> {
    let Some(ModelSpec::GpClassification { data, standardize }) = &cfg.model else {
        bail!("gp_bench needs a gp_classification model section");
    };
    let ds = load(data)?;
    let name = data.name();
    let grid: Vec<KernelParams> = cfg
        .gp_grid
        .signal_variance
        .iter()
        .flat_map(|&sv| cfg.gp_grid.lengthscale.iter().map(move |&ls| (sv, ls)))
        .map(|(sv, ls)| {
            KernelParams::new(sv, ls).map(|k| KernelParams {
                jitter: Some(cfg.gp_grid.jitter_ratio * sv),
                ..k
            })
        })
        .collect::<chivi::Result<_>>()?;
    let folds = k_folds(ds.len(), cfg.splits.folds, cfg.seed);
    info!("{name}: {} rows, {} folds, {} grid points", ds.len(), folds.len(), grid.len());

    let results: Vec<FoldResult> = (0..folds.len())
        .into_par_iter()
        .map(|k| -> Result<FoldResult> {
            let seed = derived_seed(cfg.seed, k as u64);
            let opt = (with_seed(&cfg.optimizer, seed), with_seed(cfg.klvi_settings(), seed));
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let (mut train, mut test) = (ds.subset(&train_idx), ds.subset(&folds[k]));
            if *standardize {
                let st = train.fit_standardization();
                train = train.standardized(&st);
                test = test.standardized(&st);
            }
            let (inner_idx, hold_idx) =
                train_test_split(&train, 1.0 - cfg.gp_grid.holdout_fraction, seed, 1 << 20);
            let (inner, hold) = (train.subset(&inner_idx), train.subset(&hold_idx));

            let mut choices = Vec::new();
            let mut fits = Vec::new();
            for (method, objective) in METHODS {
                let mut best: Option<(KernelParams, f64)> = None;
                for kernel in &grid {
                    let scored = make_gp_classification(&inner, *kernel)
                        .map_err(anyhow::Error::from)
                        .and_then(|m| Ok(error_rate(&predict(&m, &fit(&m, &opt, objective, cfg.gp_grid.chivi_warm_start)?, &hold), hold.labels())));
                    match scored {
                        Ok(err) if best.map_or(true, |(_, b)| err < b) => best = Some((*kernel, err)),
                        Ok(_) => {}
                        Err(e) => warn!("fold {k} {method}: skipping kernel {kernel:?}: {e}"),
                    }
                }
                let Some((kernel, holdout_error)) = best else {
                    bail!("fold {k} {method}: no kernel on the grid could be fitted");
                };
                let model = make_gp_classification(&train, kernel)?;
                let f = fit(&model, &opt, objective, cfg.gp_grid.chivi_warm_start)?;
                let test_error = error_rate(&predict(&model, &f, &test), test.labels());
                info!("{name} fold {k} {method}: kernel ({}, {}) test error {test_error:.4}", kernel.signal_variance, kernel.lengthscale);
                choices.push(FoldChoice {
                    method,
                    signal_variance: kernel.signal_variance,
                    lengthscale: kernel.lengthscale,
                    holdout_error,
                    test_error,
                });
                fits.push(f);
            }
            Ok(FoldResult { choices, fits })
        })
        .collect::<Result<_>>()?;

    let mut table = ResultTable::default();
    for (i, (method, _)) in METHODS.iter().enumerate() {
        let errors: Vec<f64> = results.iter().map(|f| f.choices[i].test_error).collect();
        table.push(&name, method, "test_error", &errors)?;
    }
    Ok(GpOutcome {
        dataset: name,
        table,
        folds: results,
    })
}

pub fn write(outcome: &GpOutcome, dir: &Path) -> Result<serde_json::Value> {
    let mut traces = Vec::new();
    for (k, fold) in outcome.folds.iter().enumerate() {
        for (choice, fit) in fold.choices.iter().zip(&fold.fits) {
            traces.push(TaggedTrace {
                method: choice.method,
                repeat: k,
                trace: &fit.trace,
            });
        }
    }
    write_long_trace(&dir.join("trace.csv"), &traces)?;
    outcome.table.write(dir, "gp_error")?;
    Ok(json!({
        "dataset": outcome.dataset,
        "predictive": "gaussian_convolution",
        "table": outcome.table,
        "folds": outcome.folds.iter().map(|f| &f.choices).collect::<Vec<_>>(),
    }))
}
