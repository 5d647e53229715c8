//! Experiment runner behind the `chivi` binary: config loading, the five
//! experiments, and the files each run leaves behind.

pub mod config;
pub mod data;
pub mod experiments;
pub mod table;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use config::{ExperimentKind, RunConfig};
use experiments::{cox, gp, probit, property, sandwich};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paper_scale: bool,
}

/// Where a run wrote its files and whether its checks passed.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub passed: bool,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    status: &'a str,
    experiment: &'a str,
    seed: u64,
    paper_scale: bool,
    warnings: &'a [String],
    versions: serde_json::Value,
    config_path: &'a Path,
    predictive: Option<&'a str>,
    wall_seconds: Option<f64>,
    error: Option<String>,
    config: &'a RunConfig,
}

/// Loads the config and applies `--seed` and `--paper-scale`. Returns the
/// paper-scale warnings alongside.
pub fn prepare(opts: &RunOptions) -> Result<(RunConfig, Vec<String>)> {
    let mut cfg = RunConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let warnings = if opts.paper_scale {
        cfg.apply_paper_scale()
    } else {
        Vec::new()
    };
    for w in &warnings {
        warn!("{w}");
    }
    cfg.validate()?;
    cfg.check_inputs()?;
    Ok((cfg, warnings))
}

/// `--out`, then the config's `output_dir`, then `runs/<experiment>-seed<seed>`.
pub fn output_dir(opts: &RunOptions, cfg: &RunConfig) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-seed{}", cfg.experiment.name(), cfg.seed)))
}

fn predictive(kind: ExperimentKind) -> Option<&'static str> {
    match kind {
        ExperimentKind::ProbitBench | ExperimentKind::GpBench => Some("gaussian_convolution"),
        _ => None,
    }
}

/// Runs one experiment and writes its outputs, bracketed by `run_meta.json`
/// moving from `incomplete` to `complete` or `failed`.
pub fn run(opts: &RunOptions) -> Result<RunSummary> {
    let (cfg, warnings) = prepare(opts)?;
    let dir = output_dir(opts, &cfg);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut meta = RunMeta {
        status: "incomplete",
        experiment: cfg.experiment.name(),
        seed: cfg.seed,
        paper_scale: opts.paper_scale,
        warnings: &warnings,
        versions: json!({ "chivi": VERSION, "chivi_cli": VERSION }),
        config_path: &opts.config,
        predictive: predictive(cfg.experiment),
        wall_seconds: None,
        error: None,
        config: &cfg,
    };
    write_json(&dir.join("run_meta.json"), &meta)?;
    write_json(&dir.join("config.json"), &cfg)?;
    info!("{} seed {} -> {}", cfg.experiment.name(), cfg.seed, dir.display());

    let start = Instant::now();
    let outcome = execute(&cfg, &dir);
    meta.wall_seconds = Some(start.elapsed().as_secs_f64());
    match outcome {
        Ok((report, passed)) => {
            write_json(&dir.join("report.json"), &report)?;
            meta.status = "complete";
            write_json(&dir.join("run_meta.json"), &meta)?;
            Ok(RunSummary { out_dir: dir, passed })
        }
        Err(e) => {
            meta.status = "failed";
            meta.error = Some(format!("{e:#}"));
            write_json(&dir.join("run_meta.json"), &meta)?;
            Err(e)
        }
    }
}

fn execute(cfg: &RunConfig, dir: &Path) -> Result<(serde_json::Value, bool)> {
    Ok(match cfg.experiment {
        ExperimentKind::Sandwich => (sandwich::write(&sandwich::execute(cfg)?, dir)?, true),
        ExperimentKind::ProbitBench => (probit::write(&probit::execute(cfg)?, dir)?, true),
        ExperimentKind::GpBench => (gp::write(&gp::execute(cfg)?, dir)?, true),
        ExperimentKind::Cox => (cox::write(&cox::execute(cfg)?, dir)?, true),
        ExperimentKind::PropertySuite => {
            let report = property::execute(cfg)?;
            (property::write(&report, dir)?, report.passed())
        }
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Checks a config without running it; returns a one-paragraph summary.
pub fn validate(opts: &RunOptions) -> Result<String> {
    let (cfg, warnings) = prepare(opts)?;
    let mut lines = vec![format!(
        "{}: valid {} config, seed {}, output {}",
        opts.config.display(),
        cfg.experiment.name(),
        cfg.seed,
        output_dir(opts, &cfg).display()
    )];
    lines.extend(warnings.into_iter().map(|w| format!("warning: {w}")));
    Ok(lines.join("\n"))
}

/// Summarizes a finished run directory: its metadata and every text table.
pub fn report(dir: &Path) -> Result<String> {
    let meta_path = dir.join("run_meta.json");
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?,
    )?;
    let mut out = vec![format!(
        "{} (seed {}): {}",
        meta["experiment"].as_str().unwrap_or("?"),
        meta["seed"],
        meta["status"].as_str().unwrap_or("?")
    )];
    if let Some(e) = meta["error"].as_str() {
        out.push(format!("error: {e}"));
    }
    let mut tables: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    tables.sort();
    for t in tables {
        out.push(String::new());
        out.push(std::fs::read_to_string(&t)?.trim_end().to_string());
    }
    if let Ok(text) = std::fs::read_to_string(dir.join("report.json")) {
        let report: serde_json::Value = serde_json::from_str(&text)?;
        if let Some(failures) = report["failures"].as_array() {
            out.push(String::new());
            out.push(if failures.is_empty() {
                "all checks passed".to_string()
            } else {
                format!("failed checks: {}", failures.iter().filter_map(|f| f.as_str()).collect::<Vec<_>>().join(", "))
            });
        }
    }
    Ok(out.join("\n"))
}
