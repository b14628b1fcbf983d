//! θ- and φ-gradient estimators built from a [`ParticleSet`].
//!
//! All estimators share the self-normalised weights `v̄ₖ` of the particle set.
//! Writing `sₖ` for the score and `▼ₖ` for the path derivative of particle
//! `k`, the φ-gradients are
//!
//! - IWAE: `Σ v̄ₖ (▼ₖ − sₖ)`
//! - IWAE-STL: `Σ v̄ₖ ▼ₖ`
//! - IWAE-DREG: `Σ v̄ₖ² ▼ₖ`
//! - RWS (= AISLE-KL-NOREP): `Σ v̄ₖ sₖ`
//! - RWS-DREG: `Σ (v̄ₖ − v̄ₖ²) ▼ₖ`
//! - AISLE-KL: `Σ v̄ₖ ▼ₖ`
//! - AISLE-χ²-NOREP: `K Σ v̄ₖ² sₖ`
//! - AISLE-χ²: `2K Σ v̄ₖ² ▼ₖ`
//!
//! AISLE-KL equals IWAE-STL and AISLE-χ² equals `2K` times IWAE-DREG for every
//! particle set. Each side of those pairs is evaluated by its own code path
//! (matrix-vector product vs. per-particle accumulation) so the equalities
//! are checked rather than assumed.
//!
//! Every estimator is an ascent direction: for IWAE it ascends the bound, for
//! the divergence-based estimators it is the negated divergence gradient.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{sample_particles, ModelSpec, ParticleSet, ProposalParams};
use crate::importance::{regularize_weights, NormalizedWeights};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimatorKind {
    Iwae,
    IwaeStl,
    IwaeDreg,
    /// Also known as AISLE-KL-NOREP.
    Rws,
    RwsDreg,
    AisleKl,
    AisleChisqNorep,
    AisleChisq,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::Iwae,
        EstimatorKind::IwaeStl,
        EstimatorKind::IwaeDreg,
        EstimatorKind::Rws,
        EstimatorKind::RwsDreg,
        EstimatorKind::AisleKl,
        EstimatorKind::AisleChisqNorep,
        EstimatorKind::AisleChisq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Iwae => "iwae",
            EstimatorKind::IwaeStl => "iwae_stl",
            EstimatorKind::IwaeDreg => "iwae_dreg",
            EstimatorKind::Rws => "rws",
            EstimatorKind::RwsDreg => "rws_dreg",
            EstimatorKind::AisleKl => "aisle_kl",
            EstimatorKind::AisleChisqNorep => "aisle_chisq_norep",
            EstimatorKind::AisleChisq => "aisle_chisq",
        }
    }

    /// Estimators without score-function terms; these have zero variance
    /// when the proposal equals the posterior.
    pub fn is_score_free(self) -> bool {
        !matches!(
            self,
            EstimatorKind::Iwae | EstimatorKind::Rws | EstimatorKind::AisleChisqNorep
        )
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let kind = match key.as_str() {
            "iwae" => EstimatorKind::Iwae,
            "iwae_stl" => EstimatorKind::IwaeStl,
            "iwae_dreg" => EstimatorKind::IwaeDreg,
            "rws" | "aisle_kl_norep" => EstimatorKind::Rws,
            "rws_dreg" => EstimatorKind::RwsDreg,
            "aisle_kl" => EstimatorKind::AisleKl,
            "aisle_chisq_norep" | "aisle_chi2_norep" => EstimatorKind::AisleChisqNorep,
            "aisle_chisq" | "aisle_chi2" => EstimatorKind::AisleChisq,
            _ => return Err(Error::InvalidInput(format!("unknown estimator '{s}'"))),
        };
        Ok(kind)
    }
}

impl TryFrom<String> for EstimatorKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimatorKind> for String {
    fn from(kind: EstimatorKind) -> String {
        kind.name().to_string()
    }
}

/// One draw of the θ- and φ-gradients from a single particle set.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub kind: EstimatorKind,
    pub k: usize,
    pub phi_grad: DVector<f64>,
    pub theta_grad: DVector<f64>,
}

impl GradientEstimate {
    /// Uses tempered weights when `eta` is set.
    pub fn compute(kind: EstimatorKind, ps: &ParticleSet, eta: Option<f64>) -> Result<Self> {
        let phi_grad = match eta {
            Some(eta) => phi_gradient_regularized(kind, ps, eta)?,
            None => phi_gradient(kind, ps),
        };
        Ok(Self {
            kind,
            k: ps.len(),
            phi_grad,
            theta_grad: theta_gradient(ps),
        })
    }
}

/// SNIS estimate of `∇_θ log Z`, shared by every algorithm.
pub fn theta_gradient(ps: &ParticleSet) -> DVector<f64> {
    &ps.grad_theta * ps.weights.to_dvector()
}

/// φ-gradient with the particle set's own self-normalised weights.
pub fn phi_gradient(kind: EstimatorKind, ps: &ParticleSet) -> DVector<f64> {
    phi_gradient_with_weights(kind, ps, &ps.weights)
}

/// φ-gradient with weights tempered to `w^α*` so that `ESS ≥ ηK`.
pub fn phi_gradient_regularized(kind: EstimatorKind, ps: &ParticleSet, eta: f64) -> Result<DVector<f64>> {
    let reg = regularize_weights(&ps.log_weights, eta)?;
    Ok(phi_gradient_with_weights(kind, ps, &reg.weights))
}

fn per_particle_sum(columns: &DMatrix<f64>, coeff: impl Fn(usize) -> f64) -> DVector<f64> {
    let mut acc = DVector::zeros(columns.nrows());
    for (k, col) in columns.column_iter().enumerate() {
        acc.axpy(coeff(k), &col, 1.0);
    }
    acc
}

/// φ-gradient for arbitrary normalised weights over the particles of `ps`.
pub fn phi_gradient_with_weights(kind: EstimatorKind, ps: &ParticleSet, weights: &NormalizedWeights) -> DVector<f64> {
    let v = weights.to_dvector();
    let v2 = v.map(|w| w * w);
    let k = ps.len() as f64;
    match kind {
        EstimatorKind::Iwae => {
            let w = weights.as_slice();
            let p = ps.path.nrows();
            let mut acc = DVector::zeros(p);
            for (j, (d, s)) in ps.path.as_slice().chunks_exact(p).zip(ps.score.as_slice().chunks_exact(p)).enumerate() {
                for (a, (dv, sv)) in acc.iter_mut().zip(d.iter().zip(s)) {
                    *a += w[j] * (dv - sv);
                }
            }
            acc
        }
        EstimatorKind::IwaeStl => &ps.path * &v,
        EstimatorKind::IwaeDreg => &ps.path * &v2,
        EstimatorKind::Rws => &ps.score * &v,
        EstimatorKind::RwsDreg => &ps.path * (&v - &v2),
        EstimatorKind::AisleKl => {
            let w = weights.as_slice();
            per_particle_sum(&ps.path, |j| w[j])
        }
        EstimatorKind::AisleChisqNorep => (&ps.score * &v2) * k,
        EstimatorKind::AisleChisq => {
            let w = weights.as_slice();
            per_particle_sum(&ps.path, |j| 2.0 * k * w[j] * w[j])
        }
    }
}

/// Componentwise Monte-Carlo moments of a vector-valued statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: DVector<f64>,
    /// Sample standard deviation of a single draw.
    pub std_dev: DVector<f64>,
    /// Standard error of the mean, `std_dev / √count`.
    pub std_err: DVector<f64>,
}

impl Moments {
    /// `|mean| / std_dev` per component.
    pub fn snr(&self) -> DVector<f64> {
        self.mean.zip_map(&self.std_dev, |m, s| m.abs() / s)
    }
}

#[derive(Clone)]
struct Accumulator {
    count: usize,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
        }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    fn merge(mut self, other: &Accumulator) -> Self {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other.clone();
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        self
    }
}

const MC_CHUNK: usize = 256;

/// Moments of `draw(index)` over `index ∈ 0..m`.
///
/// Draws are grouped into fixed-size chunks evaluated in parallel and merged
/// in chunk order, so the result is bit-identical for any thread count.
pub fn monte_carlo<F>(m: usize, dim: usize, draw: F) -> Result<Moments>
where
    F: Fn(usize) -> Result<DVector<f64>> + Sync,
{
    if m < 2 {
        return Err(Error::InvalidInput("need at least two Monte-Carlo draws".into()));
    }
    let chunks: Vec<usize> = (0..m.div_ceil(MC_CHUNK)).collect();
    let run_chunk = |c: &usize| -> Result<Accumulator> {
        let mut acc = Accumulator::new(dim);
        for idx in c * MC_CHUNK..((c + 1) * MC_CHUNK).min(m) {
            acc.push(&draw(idx)?);
        }
        Ok(acc)
    };

    #[cfg(feature = "parallel")]
    let partials: Vec<Result<Accumulator>> = {
        use rayon::prelude::*;
        chunks.par_iter().map(run_chunk).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Result<Accumulator>> = chunks.iter().map(run_chunk).collect();

    let mut total = Accumulator::new(dim);
    for part in partials {
        total = total.merge(&part?);
    }
    let n = total.count as f64;
    let std_dev = total.m2.map(|v| (v / (n - 1.0)).max(0.0).sqrt());
    let std_err = &std_dev / n.sqrt();
    Ok(Moments {
        count: total.count,
        mean: total.mean,
        std_dev,
        std_err,
    })
}

/// Which gradient a Monte-Carlo study targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientTarget {
    Phi(EstimatorKind),
    Theta,
}

impl fmt::Display for GradientTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradientTarget::Phi(kind) => kind.fmt(f),
            GradientTarget::Theta => f.write_str("theta"),
        }
    }
}

impl FromStr for GradientTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("theta") {
            Ok(GradientTarget::Theta)
        } else {
            s.parse().map(GradientTarget::Phi)
        }
    }
}

/// Mean and spread of a gradient estimator over `m` independent particle sets
/// of size `k`. Draw `j` uses the stream `(seed, j, k, 0)`, so different
/// targets at the same `k` see the same particles.
pub fn expected_gradient(
    target: GradientTarget,
    model: &ModelSpec,
    phi: &ProposalParams,
    x: &DVector<f64>,
    m: usize,
    k: usize,
    seed: u64,
) -> Result<Moments> {
    let dim = match target {
        GradientTarget::Phi(_) => ProposalParams::flat_len(model.dim()),
        GradientTarget::Theta => model.dim(),
    };
    monte_carlo(m, dim, |j| {
        let mut rng = stream(seed, j as u64, k as u64, 0, Purpose::MonteCarlo);
        let ps = sample_particles(model, phi, x, k, &mut rng)?;
        Ok(match target {
            GradientTarget::Phi(kind) => phi_gradient(kind, &ps),
            GradientTarget::Theta => theta_gradient(&ps),
        })
    })
}
