//! Acceptance criteria AC1-AC11. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Pass criterion names (`AC4 AC9`) to run a subset.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use chivi::gradients::{elbo_reparam_grad, reparam_grad, sample_elbo, stabilized_objective};
use chivi::model::{make_conjugate_gaussian, make_probit, ConjugateGaussian};
use chivi::optimize::{chivi_fit, initial_params, klvi_fit, OptimizerConfig};
use chivi::oracle::{quad_posterior, Quadrature};
use chivi::{Dataset, Model, NoiseStream, VariationalParams};
use chivi_cli::config::RunConfig;
use chivi_cli::experiments::property::{self, PropertyReport};
use chivi_cli::RunOptions;
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        passed,
        detail: detail.into(),
    })
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn property_report() -> Result<PropertyReport> {
    property::execute(&RunConfig::from_json(r#"{"experiment": "property_suite", "seed": 3}"#)?)
}

/// Passes when every named check in the suite passed.
fn suite_checks(report: &PropertyReport, names: &[&str]) -> Result<Outcome> {
    let mut passed = true;
    let mut parts = Vec::new();
    for name in names {
        let c = report.get(name).with_context(|| format!("no check named {name}"))?;
        passed &= c.passed;
        parts.push(format!("{name} slack {:.2e}", c.slack));
    }
    outcome(passed, parts.join(", "))
}

fn ac1(report: &PropertyReport) -> Result<Outcome> {
    suite_checks(report, &["tightness_n1"])
}

fn ac2(report: &PropertyReport) -> Result<Outcome> {
    suite_checks(report, &["sandwich", "cubo_monotone_in_n", "cubo_limit_n_to_0", "cubo_limit_extrapolated"])
}

fn ac6(report: &PropertyReport) -> Result<Outcome> {
    suite_checks(report, &["is_variance_identity"])
}

fn ac7(report: &PropertyReport) -> Result<Outcome> {
    suite_checks(report, &["affine_invariance", "factorization", "conjugate_symmetry"])
}

fn ac8(report: &PropertyReport) -> Result<Outcome> {
    suite_checks(report, &["taylor_kl"])
}

fn conjugate(dim: usize) -> Result<ConjugateGaussian> {
    Ok(match dim {
        1 => make_conjugate_gaussian(vec![0.2], vec![1.5], 0.8, vec![vec![0.9], vec![0.1], vec![1.4]])?,
        _ => make_conjugate_gaussian(
            vec![0.0, 1.0],
            vec![1.0, 2.0],
            1.0,
            vec![vec![0.5, 1.5], vec![1.0, 0.2], vec![-0.3, 0.9], vec![0.8, 1.1]],
        )?,
    })
}

fn probit_fixture() -> Result<chivi::model::Probit> {
    let xs = [0.4, 1.1, -0.6, 1.8, 0.9];
    let ys = [1.0, 1.0, 1.0, 1.0, -1.0];
    let ds = Dataset::new(xs.iter().map(|&x| vec![x]).collect(), ys.to_vec())?;
    Ok(make_probit(&ds, 4.0, false)?)
}

fn flat_fd(params: &VariationalParams, f: impl Fn(&VariationalParams) -> f64) -> Vec<f64> {
    let flat = params.to_flat();
    (0..flat.len())
        .map(|k| {
            let h = 1e-5 * flat[k].abs().max(1.0);
            let eval = |delta: f64| {
                let mut v = flat.clone();
                v[k] += delta;
                let mut q = params.clone();
                q.set_flat(&v).expect("same layout");
                f(&q)
            };
            (eval(h) - eval(-h)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    num / den
}

/// CHIVI and ELBO reparameterization gradients against central differences
/// of the same sample objective on common random numbers.
fn ac3() -> Result<Outcome> {
    let conj = conjugate(2)?;
    let probit = probit_fixture()?;
    let models: [(&str, &dyn Model); 2] = [("conjugate", &conj), ("probit", &probit)];
    let mut rng = NoiseStream::new(2017, 0).rng(0);
    let mut worst: f64 = 0.0;
    for (_, model) in models {
        let d = model.latent_dim();
        for point in 0..20u64 {
            let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let log_scale: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..0.3)).collect();
            let q = VariationalParams::mean_field(mean, log_scale)?;
            let n = [1.5, 2.0, 3.0][point as usize % 3];
            let s = NoiseStream::new(point, 1);
            let g = reparam_grad(model, &q, n, 16, None, s)?;
            let f = flat_fd(&q, |p| stabilized_objective(model, p, n, 16, None, s, g.max_log_w).unwrap());
            worst = worst.max(rel_err(&g.grad, &f));
            let g = elbo_reparam_grad(model, &q, 16, None, s)?;
            let f = flat_fd(&q, |p| sample_elbo(model, p, 16, None, s).unwrap());
            worst = worst.max(rel_err(&g.grad, &f));
        }
    }
    outcome(worst <= 1e-4, format!("largest relative error {worst:.2e} over 2 models x 20 points x 2 estimators"))
}

fn ac4() -> Result<Outcome> {
    let mut passed = true;
    let (mut worst_mu, mut worst_sd, mut worst_cubo): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for dim in [1, 2] {
        let m = conjugate(dim)?;
        let post = m.posterior();
        for seed in 0..5 {
            let cfg = OptimizerConfig {
                seed,
                max_iters: 3000,
                monitor_samples: 1000,
                ..OptimizerConfig::default()
            };
            let r = chivi_fit(&m, &initial_params(dim, &cfg), &cfg)?;
            for k in 0..dim {
                let mu = (r.params.mean[k] - post.mean[k]).abs();
                let sd = (r.params.marginal_sd()[k] / post.var[k].sqrt() - 1.0).abs();
                worst_mu = worst_mu.max(mu);
                worst_sd = worst_sd.max(sd);
                passed &= mu <= 1e-2 && sd <= 5e-2;
            }
            let cubo = (r.trace.last().context("empty trace")?.cubo - m.log_evidence()).abs();
            worst_cubo = worst_cubo.max(cubo);
            passed &= cubo <= 0.05;
        }
    }
    outcome(
        passed,
        format!("worst |mu - mu*| {worst_mu:.2e}, |sd/sd* - 1| {worst_sd:.2e}, |CUBO - log p(x)| {worst_cubo:.3}"),
    )
}

fn ac5() -> Result<Outcome> {
    let m = probit_fixture()?;
    let exact = quad_posterior(&m, &Quadrature::default())?.posterior_sd[0];
    let mut passed = true;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let cfg = OptimizerConfig {
            seed,
            max_iters: 3000,
            ..OptimizerConfig::default()
        };
        let init = initial_params(1, &cfg);
        let c = chivi_fit(&m, &init, &cfg)?.params.marginal_sd()[0];
        let k = klvi_fit(&m, &init, &cfg)?.params.marginal_sd()[0];
        passed &= c >= k - 1e-3 && c >= 0.95 * k;
        parts.push(format!("{c:.4}/{k:.4}"));
    }
    outcome(passed, format!("sd chivi/klvi per seed {} (quadrature sd {exact:.4})", parts.join(" ")))
}

fn run_config(name: &str, out: &Path, seed: Option<u64>) -> Result<PathBuf> {
    let summary = chivi_cli::run(&RunOptions {
        config: configs().join(name),
        out: Some(out.to_path_buf()),
        seed,
        paper_scale: false,
    })?;
    Ok(summary.out_dir)
}

fn ac9(tmp: &Path) -> Result<Outcome> {
    let mut passed = true;
    let mut parts = Vec::new();
    for (config, dataset, lo, hi) in [
        ("probit_pima.json", "pima", 0.17, 0.27),
        ("probit_ionosphere.json", "ionosphere", 0.07, 0.17),
    ] {
        let dir = run_config(config, &tmp.join(dataset), None)?;
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json"))?)?;
        let row = report["table"]["rows"]
            .as_array()
            .and_then(|rows| rows.iter().find(|r| r["method"] == "chivi"))
            .context("no chivi row")?;
        let mean = row["mean"].as_f64().context("mean")?;
        ensure!(row["repeats"].as_u64() == Some(10), "expected 10 repeats");
        passed &= (lo..=hi).contains(&mean);
        parts.push(format!("{dataset} {mean:.3} in [{lo}, {hi}]"));
    }
    outcome(passed, parts.join(", "))
}

fn ac10(tmp: &Path) -> Result<Outcome> {
    let dir = run_config("cox_synthetic.json", &tmp.join("cox"), None)?;
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json"))?)?;
    let mut passed = true;
    let mut parts = Vec::new();
    for p in report["players"].as_array().context("players")? {
        let (c, k) = (p["chivi_sd_l1"].as_f64().context("chivi")?, p["klvi_sd_l1"].as_f64().context("klvi")?);
        passed &= c <= k + 0.01;
        parts.push(format!("{c:.4} <= {k:.4} + 0.01"));
    }
    for map in ["chivi_sd.csv", "klvi_sd.csv", "hmc_sd.csv", "counts.csv"] {
        ensure!(dir.join("maps/player_0").join(map).is_file(), "missing map {map}");
    }
    outcome(passed, format!("sd-map L1 chivi vs klvi per player: {}", parts.join(", ")))
}

/// Small variants of every experiment with a `trace.csv`, each run twice.
fn ac11(tmp: &Path) -> Result<Outcome> {
    let variants: [(&str, &str); 4] = [
        ("sandwich_conjugate.json", r#"{}"#),
        ("probit_pima.json", r#"{"splits": {"train_fraction": 0.9, "num_repeats": 2}, "optimizer": {"max_iters": 200, "estimator": "score", "minibatch": 64, "monitor_samples": 100}}"#),
        ("gp_synthetic.json", r#"{"splits": {"folds": 3}, "optimizer": {"max_iters": 150, "monitor_samples": 50}}"#),
        ("cox_synthetic.json", r#"{"splits": {"num_repeats": 1}, "optimizer": {"samples": 64, "max_iters": 150, "monitor_samples": 50}, "klvi_optimizer": {"samples": 16, "max_iters": 150, "monitor_samples": 50}, "oracle": {"method": "hmc", "hmc": {"num_samples": 200, "burn_in": 50, "chains": 2}}}"#),
    ];
    let mut parts = Vec::new();
    let mut passed = true;
    for (name, overrides) in variants {
        let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(configs().join(name))?)?;
        let patch: serde_json::Value = serde_json::from_str(overrides)?;
        for (k, v) in patch.as_object().context("object")? {
            match (cfg.get_mut(k), v) {
                (Some(serde_json::Value::Object(base)), serde_json::Value::Object(extra)) => {
                    base.extend(extra.clone());
                }
                _ => {
                    cfg[k] = v.clone();
                }
            }
        }
        let stem = name.trim_end_matches(".json");
        let path = configs().join(format!(".acceptance_{stem}.json"));
        std::fs::write(&path, serde_json::to_string(&cfg)?)?;
        let run = |i: usize| run_config(path.file_name().and_then(|s| s.to_str()).unwrap_or_default(), &tmp.join(format!("{stem}_{i}")), None);
        let result = run(0).and_then(|a| Ok((a, run(1)?)));
        std::fs::remove_file(&path)?;
        let (a, b) = result?;
        let same = std::fs::read(a.join("trace.csv"))? == std::fs::read(b.join("trace.csv"))?;
        passed &= same;
        parts.push(format!("{stem} {}", if same { "identical" } else { "DIFFERS" }));
    }
    outcome(passed, parts.join(", "))
}

type Criterion<'a> = (&'a str, Duration, Box<dyn Fn() -> Result<Outcome> + 'a>);

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let wanted = |name: &str| filter.is_empty() || filter.iter().any(|f| f == name);
    let tmp = tempfile::tempdir().expect("temp dir");
    let tmp = tmp.path();

    let needs_suite = ["AC1", "AC2", "AC6", "AC7", "AC8"].iter().any(|n| wanted(n));
    let start = Instant::now();
    let report = if needs_suite { Some(property_report()) } else { None };
    let suite_time = start.elapsed();
    let suite = |f: fn(&PropertyReport) -> Result<Outcome>| {
        let report = &report;
        move || match report {
            Some(Ok(r)) => f(r),
            Some(Err(e)) => Err(anyhow::anyhow!("property suite failed to run: {e:#}")),
            None => unreachable!(),
        }
    };

    let secs = Duration::from_secs;
    let criteria: Vec<Criterion> = vec![
        ("AC1", secs(10), Box::new(suite(ac1))),
        ("AC2", secs(30), Box::new(suite(ac2))),
        ("AC3", secs(60), Box::new(ac3)),
        ("AC4", secs(120), Box::new(ac4)),
        ("AC5", secs(120), Box::new(ac5)),
        ("AC6", secs(30), Box::new(suite(ac6))),
        ("AC7", secs(30), Box::new(suite(ac7))),
        ("AC8", secs(30), Box::new(suite(ac8))),
        ("AC9", secs(15 * 60), Box::new(|| ac9(tmp))),
        ("AC10", secs(10 * 60), Box::new(|| ac10(tmp))),
        ("AC11", secs(10 * 60), Box::new(|| ac11(tmp))),
    ];

    let mut failed = Vec::new();
    for (name, limit, check) in criteria {
        if !wanted(name) {
            continue;
        }
        let t = Instant::now();
        let result = check();
        // the shared property suite run counts against each criterion that reads it
        let elapsed = t.elapsed() + if ["AC1", "AC2", "AC6", "AC7", "AC8"].contains(&name) { suite_time } else { Duration::ZERO };
        let (passed, detail) = match result {
            Ok(o) => (o.passed && elapsed <= limit, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        println!(
            "{name} {} ({:.1}s, limit {}s): {detail}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
        if !passed {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
