use serde::{Deserialize, Serialize};

use super::{chivi_fit, klvi_fit, FitResult, GapRow, OptimizerConfig};
use crate::error::Result;
use crate::model::Model;
use crate::variational::VariationalParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichResult {
    pub chivi: FitResult,
    pub klvi: FitResult,
    pub gap_trace: Vec<GapRow>,
}

impl SandwichResult {
    pub fn final_gap(&self) -> Option<&GapRow> {
        self.gap_trace.last()
    }
}

/// Runs CHIVI and KLVI side by side and pairs the CHIVI CUBO with the KLVI
/// ELBO at every iteration both traces recorded.
pub fn sandwich_run(
    model: &dyn Model,
    init: &VariationalParams,
    chivi_cfg: &OptimizerConfig,
    klvi_cfg: &OptimizerConfig,
) -> Result<SandwichResult> {
    let (chivi, klvi) = rayon::join(
        || chivi_fit(model, init, chivi_cfg),
        || klvi_fit(model, init, klvi_cfg),
    );
    let (chivi, klvi) = (chivi?, klvi?);
    let mut gap_trace = Vec::new();
    let mut j = 0;
    for c in &chivi.trace.rows {
        while j < klvi.trace.rows.len() && klvi.trace.rows[j].iteration < c.iteration {
            j += 1;
        }
        if let Some(k) = klvi.trace.rows.get(j).filter(|k| k.iteration == c.iteration) {
            gap_trace.push(GapRow {
                iteration: c.iteration,
                elbo: k.elbo,
                cubo: c.cubo,
                gap: c.cubo - k.elbo,
                joint_se: (c.cubo_se.powi(2) + k.elbo_se.powi(2)).sqrt(),
            });
        }
    }
    Ok(SandwichResult {
        chivi,
        klvi,
        gap_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_conjugate_gaussian;
    use crate::optimize::initial_params;

    #[test]
    fn conjugate_gap_closes_around_the_evidence() {
        let m = make_conjugate_gaussian(vec![0.0], vec![1.0], 0.5, vec![vec![0.3], vec![0.9], vec![-0.2]]).unwrap();
        let chivi = OptimizerConfig { max_iters: 1500, ..OptimizerConfig::default() };
        let klvi = OptimizerConfig { seed: 1, ..chivi.clone() };
        let r = sandwich_run(&m, &initial_params(1, &chivi), &chivi, &klvi).unwrap();
        let last = r.final_gap().unwrap();
        assert!(last.gap <= 0.1, "gap {}", last.gap);
        let lz = m.log_evidence();
        assert!(last.elbo - 3.0 * last.joint_se <= lz && lz <= last.cubo + 3.0 * last.joint_se);
        for row in &r.gap_trace {
            assert!(row.gap >= -3.0 * row.joint_se, "{row:?}");
        }
    }

    #[test]
    fn zero_iterations_give_empty_gap_trace() {
        let m = make_conjugate_gaussian(vec![0.0], vec![1.0], 0.5, vec![vec![0.3]]).unwrap();
        let cfg = OptimizerConfig { max_iters: 0, ..OptimizerConfig::default() };
        let r = sandwich_run(&m, &initial_params(1, &cfg), &cfg, &cfg).unwrap();
        assert!(r.gap_trace.is_empty());
    }
}
