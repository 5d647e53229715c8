use std::path::Path;

use nalgebra::{Cholesky, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::kernel::factorized_gram;
use super::{KernelParams, Model};
use crate::error::{Error, Result};
use crate::rng::NoiseStream;
use crate::special::{ln_factorial, LN_2PI};

/// Largest grid a dense Cox model will factorize.
pub const DEFAULT_MAX_CELLS: usize = 2500;

/// Log-intensity above which evaluation is refused as a divergence signal.
pub const DEFAULT_OVERFLOW_BOUND: f64 = 30.0;

/// One shot attempt on the court.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotEvent {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub made: bool,
}

/// Event counts binned on a regular `nx × ny` grid.
///
/// Cells are stored row-major with `x` varying fastest: cell `iy * nx + ix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub cell_counts: Vec<u64>,
    pub cell_area: f64,
}

impl CoxGrid {
    pub fn empty(x_range: (f64, f64), y_range: (f64, f64), nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        let (dx, dy) = (x_range.1 - x_range.0, y_range.1 - y_range.0);
        if !(dx > 0.0 && dy > 0.0) {
            return Err(Error::invalid("grid extents must have positive width"));
        }
        Ok(Self {
            x_range,
            y_range,
            nx,
            ny,
            cell_counts: vec![0; nx * ny],
            cell_area: (dx / nx as f64) * (dy / ny as f64),
        })
    }

    /// Bins events; events outside the extents are dropped.
    pub fn from_events(
        events: &[ShotEvent],
        x_range: (f64, f64),
        y_range: (f64, f64),
        nx: usize,
        ny: usize,
    ) -> Result<Self> {
        let mut grid = Self::empty(x_range, y_range, nx, ny)?;
        for e in events {
            if let Some(cell) = grid.cell_of(e.x, e.y) {
                grid.cell_counts[cell] += 1;
            }
        }
        Ok(grid)
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        if !(x >= x0 && x <= x1 && y >= y0 && y <= y1) {
            return None;
        }
        let ix = (((x - x0) / (x1 - x0)) * self.nx as f64).floor() as usize;
        let iy = (((y - y0) / (y1 - y0)) * self.ny as f64).floor() as usize;
        Some(iy.min(self.ny - 1) * self.nx + ix.min(self.nx - 1))
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let (ix, iy) = (cell % self.nx, cell / self.nx);
        let dx = (self.x_range.1 - self.x_range.0) / self.nx as f64;
        let dy = (self.y_range.1 - self.y_range.0) / self.ny as f64;
        [
            self.x_range.0 + (ix as f64 + 0.5) * dx,
            self.y_range.0 + (iy as f64 + 0.5) * dy,
        ]
    }

    pub fn total_count(&self) -> u64 {
        self.cell_counts.iter().sum()
    }

    /// Draws `f ~ GP(0, k)` on the cell centres and Poisson counts with mean
    /// `cell_area · exp(f)`. Returns the grid and the latent draw.
    ///
    /// Inside `thin_region` (x0, x1, y0, y1) each count is binomially thinned
    /// with keep probability `keep`, producing a data-scarce patch.
    pub fn simulate(
        template: &CoxGrid,
        kernel: &KernelParams,
        noise: NoiseStream,
        thin: Option<((f64, f64, f64, f64), f64)>,
    ) -> Result<(CoxGrid, Vec<f64>)> {
        let centers: Vec<Vec<f64>> = (0..template.num_cells())
            .map(|c| template.cell_center(c).to_vec())
            .collect();
        let (_, chol, _) = factorized_gram(&centers, kernel)?;
        let mut rng = noise.rng(0);
        let eps = DVector::from_iterator(centers.len(), (0..centers.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let f = chol.l() * eps;
        let mut grid = template.clone();
        for (c, count) in grid.cell_counts.iter_mut().enumerate() {
            let rate = template.cell_area * f[c].exp();
            let mut k = Poisson::new(rate)
                .map(|p| p.sample(&mut rng) as u64)
                .map_err(|e| Error::invalid(format!("poisson rate {rate}: {e}")))?;
            if let Some(((x0, x1, y0, y1), keep)) = thin {
                let [cx, cy] = template.cell_center(c);
                if cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1 {
                    k = (0..k).filter(|_| rng.random::<f64>() < keep).count() as u64;
                }
            }
            *count = k;
        }
        Ok((grid, f.iter().copied().collect()))
    }
}

/// Reads shot events from a CSV with columns `x`, `y` and optional `made`.
pub fn load_shot_events(path: impl AsRef<Path>) -> Result<Vec<ShotEvent>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (xi, yi) = match (col("x"), col("y")) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            return Err(Error::Parse {
                path: shown,
                row: 1,
                message: "shot CSV needs `x` and `y` columns".into(),
            })
        }
    };
    let mi = col("made");
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let num = |j: usize| -> Result<f64> {
            let cell = record.get(j).unwrap_or("").trim();
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    path: shown.clone(),
                    row: line,
                    message: format!("`{cell}` is not a finite number"),
                })
        };
        let made = match mi.and_then(|j| record.get(j)).map(str::trim) {
            None | Some("") | Some("0") | Some("false") | Some("False") => false,
            Some("1") | Some("true") | Some("True") => true,
            Some(other) => {
                return Err(Error::Parse {
                    path: shown.clone(),
                    row: line,
                    message: format!("`made` value `{other}` is not 0/1/true/false"),
                })
            }
        };
        events.push(ShotEvent {
            x: num(xi)?,
            y: num(yi)?,
            made,
        });
    }
    Ok(events)
}

/// Discretized log-Gaussian Cox process on a grid.
///
/// `f ~ N(0, K)`, count in cell `i` ~ Poisson(`A · exp(fᵢ)`), so each cell
/// contributes `cᵢ fᵢ - A exp(fᵢ) - log cᵢ!` to the log-joint.
#[derive(Debug, Clone)]
pub struct CoxProcess {
    grid: CoxGrid,
    kernel: KernelParams,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    log_factorials: Vec<f64>,
    overflow_bound: f64,
}

pub fn make_cox_process(grid: CoxGrid, kernel: KernelParams) -> Result<CoxProcess> {
    if grid.num_cells() > DEFAULT_MAX_CELLS {
        return Err(Error::invalid(format!(
            "{} cells exceeds the limit of {DEFAULT_MAX_CELLS}",
            grid.num_cells()
        )));
    }
    if grid.cell_counts.len() != grid.num_cells() {
        return Err(Error::DimensionMismatch {
            expected: grid.num_cells(),
            got: grid.cell_counts.len(),
        });
    }
    if !(grid.cell_area > 0.0) {
        return Err(Error::invalid("cell area must be positive"));
    }
    let centers: Vec<Vec<f64>> = (0..grid.num_cells()).map(|c| grid.cell_center(c).to_vec()).collect();
    let (_, chol, _) = factorized_gram(&centers, &kernel)?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_factorials = grid.cell_counts.iter().map(|&c| ln_factorial(c)).collect();
    Ok(CoxProcess {
        grid,
        kernel,
        chol,
        log_det,
        log_factorials,
        overflow_bound: DEFAULT_OVERFLOW_BOUND,
    })
}

impl CoxProcess {
    pub fn with_overflow_bound(mut self, bound: f64) -> Self {
        self.overflow_bound = bound;
        self
    }

    pub fn grid(&self) -> &CoxGrid {
        &self.grid
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }
}

impl Model for CoxProcess {
    fn latent_dim(&self) -> usize {
        self.grid.num_cells()
    }

    fn data_count(&self) -> usize {
        self.grid.num_cells()
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        let mut a = DVector::from_column_slice(z);
        self.chol.l_dirty().solve_lower_triangular_mut(&mut a);
        -0.5 * (z.len() as f64 * LN_2PI + self.log_det + a.norm_squared())
    }

    fn add_grad_log_prior(&self, z: &[f64], grad: &mut [f64]) {
        let kinv_f = self.chol.solve(&DVector::from_column_slice(z));
        for (g, v) in grad.iter_mut().zip(kinv_f.iter()) {
            *g -= v;
        }
    }

    fn log_lik_term(&self, i: usize, z: &[f64]) -> f64 {
        let c = self.grid.cell_counts[i] as f64;
        c * z[i] - self.grid.cell_area * z[i].exp() - self.log_factorials[i]
    }

    fn add_grad_log_lik_term(&self, i: usize, z: &[f64], scale: f64, grad: &mut [f64]) {
        let c = self.grid.cell_counts[i] as f64;
        grad[i] += scale * (c - self.grid.cell_area * z[i].exp());
    }

    fn check_support(&self, z: &[f64]) -> Result<()> {
        match z.iter().enumerate().find(|(_, &f)| !(f <= self.overflow_bound)) {
            Some((cell, &value)) => Err(Error::Overflow {
                cell,
                value,
                bound: self.overflow_bound,
            }),
            None => Ok(()),
        }
    }
}
