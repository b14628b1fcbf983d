//! # aisle
//!
//! Importance-sampling gradient estimators for variational inference.
//!
//! The crate implements the family of self-normalised importance-sampling
//! gradients used to fit a proposal `q_φ` to a posterior `π_θ`:
//!
//! | Estimator | φ-gradient |
//! |-----------|------------|
//! | IWAE | `Σ v̄ₖ (▼ₖ − sₖ)` |
//! | IWAE-STL | `Σ v̄ₖ ▼ₖ` |
//! | IWAE-DREG | `Σ v̄ₖ² ▼ₖ` |
//! | RWS (AISLE-KL-NOREP) | `Σ v̄ₖ sₖ` |
//! | RWS-DREG | `Σ (v̄ₖ − v̄ₖ²) ▼ₖ` |
//! | AISLE-KL | `Σ v̄ₖ ▼ₖ` |
//! | AISLE-χ²-NOREP | `K Σ v̄ₖ² sₖ` |
//! | AISLE-χ² | `2K Σ v̄ₖ² ▼ₖ` |
//!
//! where `v̄ₖ` are self-normalised weights, `sₖ = ∇_φ log q_φ(zₖ)` is the
//! score and `▼ₖ` is the path derivative of the log-weight through the
//! reparametrisation.
//!
//! Everything is exercised on a linear-Gaussian model where the posterior,
//! evidence and both KL divergences are available in closed form, so every
//! estimator can be checked against an exact answer.
//!
//! ## Modules
//!
//! - [`importance`]: log-weights, self-normalisation, ESS and weight tempering.
//! - [`gaussian`]: the generative model, proposal, reparametrisation and
//!   analytic gradients; particle sampling.
//! - [`estimators`]: θ- and φ-gradient estimators.
//! - [`optim`]: L1-normalised gradient ascent and ADAM.
//! - [`harness`]: synthetic experiments, SNR sweeps and CSV output.
//! - [`oracles`]: independent ground truth (finite differences, closed-form
//!   KL, quadrature, grid search). Production code never calls into it.

pub mod checks;
pub mod error;
pub mod estimators;
pub mod gaussian;
pub mod harness;
pub mod importance;
pub mod optim;
pub mod oracles;
pub mod rng;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use estimators::{EstimatorKind, GradientEstimate};
pub use gaussian::{ModelSpec, ParticleSet, ProposalParams};
pub use importance::{LogWeights, NormalizedWeights, RegularizedWeights};
pub use optim::{OptimizerKind, OptimizerState};
