//! Synthetic-data experiments on the Gaussian benchmark.
//!
//! A replicate draws a fresh prior mean `μ ~ N(0, I)`, `N` observations from
//! the generative model, fixes `θ` at its maximum-likelihood value and then
//! optimises only the proposal parameters `φ` from a standard-normal
//! initialisation. After every step it records the mean absolute error of the
//! intercept `b` against `b* = PΣ⁻¹θ_ML`, the intercept of the exact
//! posterior mean (which is affine in `x`). Medians over replicates are the
//! reported curves.

mod config;
mod output;
mod snr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub use config::{ConfigError, OneOrMany, RunConfig};
pub use output::{format_sig17, write_snr_csv, write_trajectory_csv, RunMetadata, SNR_CSV_HEADER, TRAJECTORY_CSV_HEADER};
pub use snr::{fit_log_log_slope, snr_reference_problem, snr_sweep, SnrRow, SnrTable};

use crate::error::{Error, Result};
use crate::estimators::{phi_gradient, phi_gradient_regularized, EstimatorKind};
use crate::gaussian::{sample_particles, theta_ml, ModelSpec, ProposalParams};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::rng::{standard_normal, stream, Purpose};

/// Prior covariance used by an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scenario {
    /// `Σ = I`; the proposal family contains the posterior.
    Diagonal,
    /// `Σ_{dd'} = 0.95^{|d−d'|+1}`; the factorised proposal cannot match it.
    ArCorrelated,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Diagonal => "diagonal",
            Scenario::ArCorrelated => "ar_correlated",
        }
    }

    pub fn sigma(self, d: usize) -> DMatrix<f64> {
        match self {
            Scenario::Diagonal => DMatrix::identity(d, d),
            Scenario::ArCorrelated => DMatrix::from_fn(d, d, |i, j| 0.95f64.powi(i.abs_diff(j) as i32 + 1)),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "diagonal" => Ok(Scenario::Diagonal),
            "ar_correlated" => Ok(Scenario::ArCorrelated),
            _ => Err(Error::InvalidInput(format!("unknown scenario '{s}'"))),
        }
    }
}

impl TryFrom<String> for Scenario {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.name().to_string()
    }
}

/// One cell of an experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub estimator: EstimatorKind,
    pub optimizer: OptimizerKind,
    /// Weight-tempering target; `None` disables regularisation.
    pub eta: Option<f64>,
    pub iterations: usize,
    pub replicates: usize,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("D", self.d),
            ("K", self.k),
            ("N", self.n),
            ("iterations", self.iterations),
            ("replicates", self.replicates),
        ] {
            if value == 0 {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::InvalidInput(format!("eta must lie in (0, 1], got {eta}")));
            }
        }
        Ok(())
    }
}

/// Synthetic data and targets for one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateData {
    /// Prior mean the data were generated from.
    pub true_mu: DVector<f64>,
    pub observations: Vec<DVector<f64>>,
    /// `θ_ML`, the sample mean of the observations.
    pub theta_star: DVector<f64>,
    /// Model with `θ` fixed at `θ_ML`.
    pub model: ModelSpec,
    /// `PΣ⁻¹θ_ML`.
    pub b_star: DVector<f64>,
}

/// Draws `μ ~ N(0, I)` and `N` observations `x = z + ε`, `z ~ N(μ, Σ)`.
pub fn generate_replicate_data(config: &ExperimentConfig, replicate: usize) -> Result<ReplicateData> {
    config.validate()?;
    let d = config.d;
    let mut rng = stream(config.master_seed, replicate as u64, 0, 0, Purpose::Data);
    let true_mu = DVector::from_fn(d, |_, _| standard_normal(&mut rng));
    let base = ModelSpec::new(true_mu.clone(), config.scenario.sigma(d))?;
    let l = base.sigma_cholesky().l();
    let observations: Vec<DVector<f64>> = (0..config.n)
        .map(|_| {
            let eps = DVector::from_fn(d, |_, _| standard_normal(&mut rng));
            let z = &true_mu + &l * eps;
            let noise = DVector::from_fn(d, |_, _| standard_normal(&mut rng));
            z + noise
        })
        .collect();
    let theta_star = theta_ml(&observations)?;
    let model = base.with_mu(theta_star.clone())?;
    let b_star = model.posterior_intercept();
    Ok(ReplicateData {
        true_mu,
        observations,
        theta_star,
        model,
        b_star,
    })
}

/// Every entry of `A`, `b` and `c` i.i.d. standard normal, drawn in flat-layout order.
pub fn init_phi<R: rand::Rng + ?Sized>(d: usize, rng: &mut R) -> ProposalParams {
    let flat: Vec<f64> = (0..ProposalParams::flat_len(d)).map(|_| standard_normal(rng)).collect();
    ProposalParams::from_flat(d, &flat).expect("standard normal draws are finite")
}

/// `init_phi` on the replicate's initialisation stream.
pub fn replicate_init_phi(config: &ExperimentConfig, replicate: usize) -> ProposalParams {
    let mut rng = stream(config.master_seed, replicate as u64, 0, 0, Purpose::Init);
    init_phi(config.d, &mut rng)
}

/// Mean over components of `|b_d − b*_d|`, one entry per recorded iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTrajectory(pub Vec<f64>);

impl ErrorTrajectory {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn final_error(&self) -> f64 {
        *self.0.last().expect("trajectories include the initial error")
    }
}

fn b_error(d: usize, flat: &DVector<f64>, b_star: &DVector<f64>) -> f64 {
    flat.rows(d * d, d)
        .iter()
        .zip(b_star.iter())
        .map(|(b, t)| (b - t).abs())
        .sum::<f64>()
        / d as f64
}

/// Runs one replicate from the standard-normal initialisation.
pub fn run_replicate(config: &ExperimentConfig, replicate: usize) -> Result<ErrorTrajectory> {
    let data = generate_replicate_data(config, replicate)?;
    let phi0 = replicate_init_phi(config, replicate);
    run_replicate_from(config, replicate, &data, phi0)
}

/// φ-gradient used at `iteration`: a fresh particle set per observation from
/// stream `(master_seed, replicate, iteration, observation)`, averaged over
/// observations.
pub fn averaged_phi_gradient(
    config: &ExperimentConfig,
    replicate: usize,
    iteration: usize,
    data: &ReplicateData,
    phi: &ProposalParams,
) -> Result<DVector<f64>> {
    let mut grad = DVector::zeros(ProposalParams::flat_len(config.d));
    for (obs, x) in data.observations.iter().enumerate() {
        let mut rng = stream(
            config.master_seed,
            replicate as u64,
            iteration as u64,
            obs as u64,
            Purpose::Particles,
        );
        let ps = sample_particles(&data.model, phi, x, config.k, &mut rng)?;
        grad += match config.eta {
            Some(eta) => phi_gradient_regularized(config.estimator, &ps, eta)?,
            None => phi_gradient(config.estimator, &ps),
        };
    }
    Ok(grad / config.n as f64)
}

/// Runs one replicate on given data from a given starting `φ`, taking one
/// optimizer step per iteration along [`averaged_phi_gradient`].
pub fn run_replicate_from(
    config: &ExperimentConfig,
    replicate: usize,
    data: &ReplicateData,
    phi0: ProposalParams,
) -> Result<ErrorTrajectory> {
    config.validate()?;
    let d = config.d;
    let abort = |iteration: usize| Error::NumericalAbort {
        replicate,
        iteration,
        estimator: config.estimator.to_string(),
    };

    let mut flat = phi0.to_flat();
    let mut opt = OptimizerState::new(config.optimizer, flat.len());
    let mut errors = Vec::with_capacity(config.iterations + 1);
    errors.push(b_error(d, &flat, &data.b_star));

    for iteration in 1..=config.iterations {
        let phi = ProposalParams::from_flat(d, flat.as_slice()).map_err(|_| abort(iteration))?;
        let grad = averaged_phi_gradient(config, replicate, iteration, data, &phi).map_err(|_| abort(iteration))?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(abort(iteration));
        }
        opt.step(&mut flat, &grad).map_err(|_| abort(iteration))?;
        errors.push(b_error(d, &flat, &data.b_star));
    }
    Ok(ErrorTrajectory(errors))
}

/// Per-iteration median across trajectories; for an even count the lower
/// of the two middle values.
pub fn aggregate(trajectories: &[ErrorTrajectory]) -> Result<Vec<f64>> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::InvalidInput("no trajectories to aggregate".into()))?;
    let len = first.0.len();
    if let Some(bad) = trajectories.iter().find(|t| t.0.len() != len) {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ ({len} vs {})",
            bad.0.len()
        )));
    }
    let mut column = vec![0.0; trajectories.len()];
    Ok((0..len)
        .map(|i| {
            for (slot, t) in column.iter_mut().zip(trajectories) {
                *slot = t.0[i];
            }
            column.sort_by(f64::total_cmp);
            column[(column.len() - 1) / 2]
        })
        .collect())
}

/// Median trajectory of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub median: Vec<f64>,
}

/// Runs every replicate of `config` (in parallel when enabled) and aggregates.
/// Replicates are independent, so the result does not depend on thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let indices: Vec<usize> = (0..config.replicates).collect();

    #[cfg(feature = "parallel")]
    let runs: Vec<Result<ErrorTrajectory>> = {
        use rayon::prelude::*;
        indices.par_iter().map(|&r| run_replicate(config, r)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<Result<ErrorTrajectory>> = indices.iter().map(|&r| run_replicate(config, r)).collect();

    let trajectories = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        config: config.clone(),
        median: aggregate(&trajectories)?,
    })
}
