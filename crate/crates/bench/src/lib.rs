//! Benchmark fixtures.

use chivi::model::{make_cox_process, make_probit, CoxGrid, CoxProcess, Probit};
use chivi::{Dataset, KernelParams, NoiseStream, VariationalParams};

/// Synthetic probit regression with `n` rows and `d` standard-normal features
/// plus an intercept.
pub fn probit(n: usize, d: usize) -> Probit {
    let noise = NoiseStream::new(11, 0);
    let beta = noise.draw(0, d).eps;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| noise.draw(1 + i as u64, d).eps).collect();
    let labels = rows
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let u = noise.draw(10_000 + i as u64, 1).eps[0];
            if eta + u > 0.0 { 1.0 } else { -1.0 }
        })
        .collect();
    let ds = Dataset::new(rows, labels).expect("valid rows");
    make_probit(&ds, 4.0, true).expect("valid model")
}

/// Simulated log-Gaussian Cox process on a `side × side` grid.
pub fn cox(side: usize) -> CoxProcess {
    let kernel = KernelParams::new(1.0, 0.5).expect("valid kernel");
    let extent = side as f64;
    let template = CoxGrid::empty((0.0, extent), (0.0, extent), side, side).expect("valid grid");
    let (grid, _) = CoxGrid::simulate(&template, &kernel, NoiseStream::new(11, 0), None).expect("simulated grid");
    make_cox_process(grid, kernel).expect("valid model")
}

/// Mean-field `q` centred at zero with sd 0.5 in every dimension.
pub fn q(dim: usize) -> VariationalParams {
    VariationalParams::mean_field(vec![0.0; dim], vec![0.5f64.ln(); dim]).expect("valid params")
}
