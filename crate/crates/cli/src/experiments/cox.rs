//! Log-Gaussian Cox process: CHIVI and KLVI posterior maps against HMC.

use std::path::Path;

use anyhow::{bail, Result};
use chivi::model::{load_shot_events, make_cox_process, CoxGrid, CoxProcess};
use chivi::optimize::{chivi_fit, initial_params, klvi_fit};
use chivi::oracle::{hmc_sample, HmcConfig, OracleCache, OracleResult};
use chivi::rng::{purpose, NoiseStream};
use chivi::{FitResult, KernelParams};
use log::{info, warn};
use serde_json::json;

use super::{l1, with_seed, write_long_trace, TaggedTrace};
use crate::config::{CoxSource, ModelSpec, RunConfig};
use crate::data::derived_seed;
use crate::table::ResultTable;

/// The binned counts, plus the latent draw when the data are synthetic.
pub fn build_grid(source: &CoxSource, kernel: &KernelParams, seed: u64) -> Result<(CoxGrid, Option<Vec<f64>>)> {
    Ok(match source {
        CoxSource::Synthetic {
            x_range,
            y_range,
            nx,
            ny,
            scarce_region,
            keep,
        } => {
            let template = CoxGrid::empty(*x_range, *y_range, *nx, *ny)?;
            let noise = NoiseStream::with_purpose(seed, purpose::DATA, 0);
            let (grid, f) = CoxGrid::simulate(&template, kernel, noise, scarce_region.map(|r| (r, *keep)))?;
            (grid, Some(f))
        }
        CoxSource::Shots {
            path,
            x_range,
            y_range,
            nx,
            ny,
        } => {
            let events = load_shot_events(path)?;
            (CoxGrid::from_events(&events, *x_range, *y_range, *nx, *ny)?, None)
        }
    })
}

/// HMC, halving the step size while acceptance stays below `min_acceptance`.
fn reference(model: &CoxProcess, cfg: &RunConfig, seed: u64) -> Result<OracleResult> {
    let mut hmc = HmcConfig {
        seed,
        ..cfg.oracle.hmc.clone()
    };
    let run = |hmc: &HmcConfig| -> Result<OracleResult> {
        match &cfg.oracle.cache_dir {
            Some(dir) => {
                let key = (&model.grid().cell_counts, model.kernel(), hmc);
                Ok(OracleCache::new(dir).get_or_compute(&key, || hmc_sample(model, hmc))?)
            }
            None => Ok(hmc_sample(model, hmc)?),
        }
    };
    let mut result = run(&hmc)?;
    for _ in 0..cfg.cox.max_hmc_retries {
        let acc = result.diagnostics.acceptance_rate.unwrap_or(0.0);
        if acc >= cfg.cox.min_acceptance {
            break;
        }
        hmc.step_size /= 2.0;
        warn!("HMC acceptance {acc:.3} below {}; retrying with step {}", cfg.cox.min_acceptance, hmc.step_size);
        result = run(&hmc)?;
    }
    Ok(result)
}

pub struct Player {
    pub seed: u64,
    pub grid: CoxGrid,
    pub true_latent: Option<Vec<f64>>,
    pub hmc: OracleResult,
    pub chivi: FitResult,
    pub klvi: FitResult,
    pub chivi_sd_l1: f64,
    pub klvi_sd_l1: f64,
    pub chivi_mean_l1: f64,
    pub klvi_mean_l1: f64,
}

pub struct CoxOutcome {
    pub table: ResultTable,
    pub players: Vec<Player>,
}

pub fn execute(cfg: &RunConfig) -> Result<CoxOutcome> {
    let Some(ModelSpec::Cox { source, kernel }) = &cfg.model else {
        bail!("cox needs a cox model section");
    };
    let players = (0..cfg.splits.num_repeats)
        .map(|r| -> Result<Player> {
            let seed = derived_seed(cfg.seed, r as u64);
            let (grid, true_latent) = build_grid(source, kernel, seed)?;
            info!("player {r}: {} events on {}x{} cells", grid.total_count(), grid.nx, grid.ny);
            let model = make_cox_process(grid.clone(), *kernel)?;
            let hmc = reference(&model, cfg, seed)?;
            let opt = with_seed(&cfg.optimizer, seed);
            let init = initial_params(grid.num_cells(), &opt);
            let klvi = klvi_fit(&model, &init, &with_seed(cfg.klvi_settings(), seed))?;
            let start = if cfg.cox.chivi_warm_start { &klvi.params } else { &init };
            let chivi = chivi_fit(&model, start, &opt)?;
            let sd = |f: &FitResult| l1(&f.params.marginal_sd(), &hmc.posterior_sd);
            let mean = |f: &FitResult| l1(&f.params.mean, &hmc.posterior_mean);
            let player = Player {
                seed,
                chivi_sd_l1: sd(&chivi),
                klvi_sd_l1: sd(&klvi),
                chivi_mean_l1: mean(&chivi),
                klvi_mean_l1: mean(&klvi),
                grid,
                true_latent,
                hmc,
                chivi,
                klvi,
            };
            info!("player {r}: sd L1 chivi {:.4}, klvi {:.4}", player.chivi_sd_l1, player.klvi_sd_l1);
            Ok(player)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = ResultTable::default();
    for (r, p) in players.iter().enumerate() {
        let name = format!("player_{r}");
        table.push(&name, "chivi", "sd_l1", &[p.chivi_sd_l1])?;
        table.push(&name, "klvi", "sd_l1", &[p.klvi_sd_l1])?;
    }
    if players.len() > 1 {
        let chivi: Vec<f64> = players.iter().map(|p| p.chivi_sd_l1).collect();
        let klvi: Vec<f64> = players.iter().map(|p| p.klvi_sd_l1).collect();
        table.push("all_players", "chivi", "sd_l1", &chivi)?;
        table.push("all_players", "klvi", "sd_l1", &klvi)?;
    }
    Ok(CoxOutcome { table, players })
}

/// Writes a latent map as `ny` rows of `nx` values, lowest `y` first.
fn write_map(path: &Path, grid: &CoxGrid, values: &[f64]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in values.chunks(grid.nx) {
        w.write_record(row.iter().map(|v| format!("{v:.10e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write(outcome: &CoxOutcome, dir: &Path) -> Result<serde_json::Value> {
    let mut traces = Vec::new();
    for (r, p) in outcome.players.iter().enumerate() {
        let maps = dir.join("maps").join(format!("player_{r}"));
        std::fs::create_dir_all(&maps)?;
        let counts: Vec<f64> = p.grid.cell_counts.iter().map(|&c| c as f64).collect();
        write_map(&maps.join("counts.csv"), &p.grid, &counts)?;
        if let Some(f) = &p.true_latent {
            write_map(&maps.join("true_latent.csv"), &p.grid, f)?;
        }
        write_map(&maps.join("hmc_mean.csv"), &p.grid, &p.hmc.posterior_mean)?;
        write_map(&maps.join("hmc_sd.csv"), &p.grid, &p.hmc.posterior_sd)?;
        for (method, fit) in [("chivi", &p.chivi), ("klvi", &p.klvi)] {
            write_map(&maps.join(format!("{method}_mean.csv")), &p.grid, &fit.params.mean)?;
            write_map(&maps.join(format!("{method}_sd.csv")), &p.grid, &fit.params.marginal_sd())?;
            traces.push(TaggedTrace {
                method,
                repeat: r,
                trace: &fit.trace,
            });
        }
    }
    write_long_trace(&dir.join("trace.csv"), &traces)?;
    outcome.table.write(dir, "cox_l1")?;
    Ok(json!({
        "table": outcome.table,
        "players": outcome.players.iter().map(|p| json!({
            "seed": p.seed,
            "events": p.grid.total_count(),
            "hmc_acceptance": p.hmc.diagnostics.acceptance_rate,
            "chivi_sd_l1": p.chivi_sd_l1,
            "klvi_sd_l1": p.klvi_sd_l1,
            "chivi_mean_l1": p.chivi_mean_l1,
            "klvi_mean_l1": p.klvi_mean_l1,
            "chivi_stop": p.chivi.stop_reason,
            "klvi_stop": p.klvi.stop_reason,
        })).collect::<Vec<_>>(),
    }))
}
