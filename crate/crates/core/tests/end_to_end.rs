use chivi::bounds::{compute_log_weights, cubo_estimate, elbo_estimate};
use chivi::gradients::{reparam_grad, score_grad};
use chivi::model::{make_conjugate_gaussian, make_probit, ConjugateGaussian, Model};
use chivi::optimize::{chivi_fit, initial_params, klvi_fit, sandwich_run, OptimizerConfig};
use chivi::oracle::{hmc_sample, quad_cubo, quad_elbo, quad_evidence, quad_posterior, HmcConfig, Quadrature};
use chivi::{Dataset, NoiseStream, VariationalParams};

fn conjugate() -> ConjugateGaussian {
    make_conjugate_gaussian(
        vec![0.0, 1.0],
        vec![1.0, 2.0],
        1.0,
        vec![vec![0.5, 1.5], vec![1.0, 0.2], vec![-0.3, 0.9]],
    )
    .unwrap()
}

fn probit() -> chivi::model::Probit {
    let xs = [0.4, 1.1, -0.6, 1.8, 0.9, -1.2];
    let ys = [1.0, 1.0, -1.0, 1.0, -1.0, -1.0];
    let ds = Dataset::new(xs.iter().map(|&x| vec![x]).collect(), ys.to_vec()).unwrap();
    make_probit(&ds, 4.0, false).unwrap()
}

fn cfg(seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        seed,
        max_iters: 1500,
        ..OptimizerConfig::default()
    }
}

#[test]
fn sandwich_brackets_the_evidence() {
    let m = conjugate();
    let c = cfg(3);
    let result = sandwich_run(&m, &initial_params(2, &c), &c, &c).unwrap();
    let last = result.final_gap().unwrap();
    let log_p = m.log_evidence();
    assert!(last.cubo + 3.0 * last.joint_se >= log_p, "{} < {log_p}", last.cubo);
    assert!(last.elbo - 3.0 * last.joint_se <= log_p, "{} > {log_p}", last.elbo);
    assert!(last.gap < 0.05, "gap {}", last.gap);
}

#[test]
fn fits_are_reproducible_across_thread_counts() {
    let m = probit();
    let c = cfg(9);
    let init = initial_params(1, &c);
    let a = chivi_fit(&m, &init, &c).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| chivi_fit(&m, &init, &c).unwrap());
    assert_eq!(a.params, b.params);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn monte_carlo_bounds_match_quadrature() {
    let m = probit();
    let q = VariationalParams::mean_field(vec![0.6], vec![0.0]).unwrap();
    let quad = Quadrature::default();
    let lw = compute_log_weights(&m, &q, 200_000, None, NoiseStream::new(4, 0)).unwrap();
    let cubo = cubo_estimate(&lw, 2.0).unwrap();
    let elbo = elbo_estimate(&lw);
    let qc = quad_cubo(&m, &q, 2.0, &quad).unwrap();
    let qe = quad_elbo(&m, &q, &quad).unwrap();
    assert!((cubo.value - qc).abs() < 5.0 * cubo.std_error.max(1e-4), "{} vs {qc}", cubo.value);
    assert!((elbo.value - qe).abs() < 5.0 * elbo.std_error, "{} vs {qe}", elbo.value);
    let log_p = quad_evidence(&m, &quad).unwrap();
    assert!(qe <= log_p && log_p <= qc);
}

#[test]
fn score_and_reparam_gradients_agree_in_expectation() {
    let m = conjugate();
    let q = VariationalParams::mean_field(vec![0.3, 0.7], vec![-0.4, -0.2]).unwrap();
    let reps = 2000;
    let mut mean = [vec![0.0; q.num_params()], vec![0.0; q.num_params()]];
    for r in 0..reps {
        let s = NoiseStream::new(r, 0);
        for (acc, g) in mean.iter_mut().zip([
            reparam_grad(&m, &q, 2.0, 32, None, s).unwrap(),
            score_grad(&m, &q, 2.0, 32, None, s).unwrap(),
        ]) {
            let scale = g.log_scale_correction.exp() / reps as f64;
            for (a, v) in acc.iter_mut().zip(&g.grad) {
                *a += scale * v;
            }
        }
    }
    let norm = mean[0].iter().map(|v| v * v).sum::<f64>().sqrt();
    for (a, b) in mean[0].iter().zip(&mean[1]) {
        assert!((a - b).abs() < 0.1 * norm, "{:?} vs {:?}", mean[0], mean[1]);
    }
}

#[test]
fn chivi_is_wider_than_klvi_on_a_skewed_posterior() {
    let m = probit();
    let c = cfg(2);
    let init = initial_params(1, &c);
    let sd_c = chivi_fit(&m, &init, &c).unwrap().params.marginal_sd()[0];
    let sd_k = klvi_fit(&m, &init, &c).unwrap().params.marginal_sd()[0];
    assert!(sd_c > sd_k, "{sd_c} <= {sd_k}");
}

#[test]
fn hmc_agrees_with_quadrature() {
    let m = probit();
    let exact = quad_posterior(&m, &Quadrature::default()).unwrap();
    let hmc = hmc_sample(
        &m,
        &HmcConfig {
            seed: 5,
            ..HmcConfig::default()
        },
    )
    .unwrap();
    assert!((hmc.posterior_mean[0] - exact.posterior_mean[0]).abs() < 0.05);
    assert!((hmc.posterior_sd[0] / exact.posterior_sd[0] - 1.0).abs() < 0.05);
    assert_eq!(m.latent_dim(), 1);
}
