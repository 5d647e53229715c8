//! Chi-divergence variational inference.
//!
//! `chivi` fits Gaussian variational approximations by descending the χ upper
//! bound (CUBO) on the log evidence, and pairs that with ordinary ELBO ascent
//! so the evidence can be bracketed from both sides:
//!
//! ```text
//! ELBO(q) <= log p(x) <= CUBO_n(q),    CUBO_n(q) = (1/n) log E_q[(p(x,z)/q(z))^n]
//! ```
//!
//! The crate is organised bottom-up:
//!
//! | module | contents |
//! |--------|----------|
//! | [`model`] | the log-joint contract and the built-in models (conjugate Gaussian, probit, GP classification, log-Gaussian Cox process) |
//! | [`variational`] | mean-field and full-rank Gaussian families with reparameterized sampling |
//! | [`bounds`] | Monte Carlo CUBO/ELBO estimators over log importance weights |
//! | [`gradients`] | reparameterization and score-function gradients of `exp(n * CUBO_n)`, ELBO gradients |
//! | [`optimize`] | the CHIVI and KLVI training loops, step-size schedules and the sandwich runner |
//! | [`oracle`] | quadrature and HMC ground truth used to validate everything above |
//!
//! Everything that draws random numbers takes an explicit [`rng::NoiseStream`],
//! so a fit is a pure function of its inputs and seed.

pub mod bounds;
pub mod error;
pub mod gradients;
pub mod model;
pub mod optimize;
pub mod oracle;
pub mod rng;
pub mod special;
pub mod variational;

pub use bounds::{cubo_estimate, elbo_estimate, BoundEstimate, BoundKind, LogWeights};
pub use error::{Error, Result};
pub use gradients::{EstimatorKind, GradientEstimate};
pub use model::{Dataset, KernelParams, Model, Subsample};
pub use optimize::{FitResult, OptimizerConfig, SandwichTrace};
pub use oracle::OracleResult;
pub use rng::{NoiseDraw, NoiseStream};
pub use variational::{Family, VariationalParams};
