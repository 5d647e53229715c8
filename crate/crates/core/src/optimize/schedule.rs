use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    RobbinsMonro,
    #[default]
    Adaptive,
}

/// Step-size schedule `ρ_t = ρ₀ / (1 + t)^κ`.
///
/// `Adaptive` scales each coordinate by bias-corrected Adam moments on top
/// of `ρ_t`; `RobbinsMonro` uses `ρ_t` as is and needs `κ ∈ (0.5, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_rate: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Adaptive,
            base_rate: 0.05,
            decay: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Schedule {
    pub fn robbins_monro(base_rate: f64, decay: f64) -> Self {
        Self {
            kind: ScheduleKind::RobbinsMonro,
            base_rate,
            decay,
            ..Self::default()
        }
    }

    pub fn adaptive(base_rate: f64, decay: f64) -> Self {
        Self {
            kind: ScheduleKind::Adaptive,
            base_rate,
            decay,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_rate > 0.0) || !self.base_rate.is_finite() {
            return Err(Error::invalid(format!("base_rate must be > 0, got {}", self.base_rate)));
        }
        match self.kind {
            ScheduleKind::RobbinsMonro => {
                if !(self.decay > 0.5 && self.decay <= 1.0) {
                    return Err(Error::invalid(format!(
                        "robbins_monro decay must lie in (0.5, 1], got {}",
                        self.decay
                    )));
                }
            }
            ScheduleKind::Adaptive => {
                if !(0.0..=1.0).contains(&self.decay) {
                    return Err(Error::invalid(format!("adaptive decay must lie in [0, 1], got {}", self.decay)));
                }
                if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
                    return Err(Error::invalid("beta1 and beta2 must lie in [0, 1)"));
                }
                if !(self.epsilon > 0.0) {
                    return Err(Error::invalid("epsilon must be > 0"));
                }
            }
        }
        Ok(())
    }
}

/// `ρ₀ / (1 + t)^κ`.
pub fn step_size(schedule: &Schedule, t: usize) -> Result<f64> {
    schedule.validate()?;
    Ok(schedule.base_rate / (1.0 + t as f64).powf(schedule.decay))
}

/// Turns raw gradients into parameter steps.
#[derive(Debug, Clone)]
pub(crate) struct Stepper {
    schedule: Schedule,
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Stepper {
    pub(crate) fn new(schedule: Schedule, num_params: usize) -> Self {
        Self {
            schedule,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    /// The step to add to the parameters for descent along `grad`.
    pub(crate) fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        let s = &self.schedule;
        let rho = s.base_rate / (1.0 + self.t as f64).powf(s.decay);
        self.t += 1;
        match s.kind {
            ScheduleKind::RobbinsMonro => grad.iter().map(|g| -rho * g).collect(),
            ScheduleKind::Adaptive => {
                let c1 = 1.0 - s.beta1.powi(self.t as i32);
                let c2 = 1.0 - s.beta2.powi(self.t as i32);
                grad.iter()
                    .enumerate()
                    .map(|(k, g)| {
                        self.m[k] = s.beta1 * self.m[k] + (1.0 - s.beta1) * g;
                        self.v[k] = s.beta2 * self.v[k] + (1.0 - s.beta2) * g * g;
                        -rho * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + s.epsilon)
                    })
                    .collect()
            }
        }
    }
}
