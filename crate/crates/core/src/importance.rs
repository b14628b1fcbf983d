//! Self-normalised importance sampling in log space.
//!
//! Weights are carried as logarithms and only exponentiated after the
//! maximum has been subtracted, so weight ranges of several hundred nats
//! (common for badly matched proposals in ten dimensions) stay finite.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

/// Bisection stops once the bracket on α* is narrower than this.
pub const ALPHA_TOLERANCE: f64 = 1e-8;
/// Hard cap on bisection steps.
pub const ALPHA_MAX_ITERATIONS: usize = 200;

/// Log importance weights `log w(zᵏ)` for `K ≥ 1` particles. All entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeights(Vec<f64>);

impl LogWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("log-weights must be nonempty".into()));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "log-weight {k} is not finite ({})",
                values[k]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `max + log Σ exp(lwₖ − max)`.
    pub fn log_sum_exp(&self) -> f64 {
        log_sum_exp_scaled(&self.0, 1.0)
    }
}

impl TryFrom<Vec<f64>> for LogWeights {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// Self-normalised weights: nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights(Vec<f64>);

impl NormalizedWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }
}

/// Tempered weights `w^α*` together with the chosen exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedWeights {
    pub alpha_star: f64,
    pub weights: NormalizedWeights,
}

fn log_sum_exp_scaled(lw: &[f64], alpha: f64) -> f64 {
    let max = lw.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(alpha * v));
    let sum: f64 = lw.iter().map(|&v| (alpha * v - max).exp()).sum();
    max + sum.ln()
}

fn softmax_scaled(lw: &[f64], alpha: f64) -> Vec<f64> {
    let max = lw.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(alpha * v));
    let mut out: Vec<f64> = lw.iter().map(|&v| (alpha * v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= total);
    out
}

fn ess_of(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Softmax of the log-weights.
pub fn self_normalize(lw: &LogWeights) -> NormalizedWeights {
    NormalizedWeights(softmax_scaled(&lw.0, 1.0))
}

/// `log Ẑ = logsumexp(lw) − log K`, the log of the unbiased evidence estimate.
pub fn log_evidence_estimate(lw: &LogWeights) -> f64 {
    lw.log_sum_exp() - (lw.len() as f64).ln()
}

/// `Σₖ v̄ₖ f(zᵏ)` for vector-valued `f`.
pub fn snis_expectation(nw: &NormalizedWeights, f_values: &[DVector<f64>]) -> Result<DVector<f64>> {
    check_dim(nw.len(), f_values.len())?;
    let dim = f_values[0].len();
    let mut acc = DVector::zeros(dim);
    for (w, f) in nw.0.iter().zip(f_values) {
        check_dim(dim, f.len())?;
        acc.axpy(*w, f, 1.0);
    }
    Ok(acc)
}

/// Effective sample size `1 / Σ v̄ₖ²`, in `[1, K]`.
pub fn ess(nw: &NormalizedWeights) -> f64 {
    ess_of(&nw.0)
}

/// ESS of the tempered weights `w^α`, computed as `(Σu)² / Σu²` on the
/// max-shifted weights so that equal weights give exactly `K`.
pub fn tempered_ess(lw: &LogWeights, alpha: f64) -> f64 {
    let max = lw.0.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(alpha * v));
    let (mut s1, mut s2) = (0.0, 0.0);
    for &v in &lw.0 {
        let u = (alpha * v - max).exp();
        s1 += u;
        s2 += u * u;
    }
    s1 * s1 / s2
}

/// Tempers the weights to `w^α*` with `α* = sup{α ∈ [0,1] : ESS(w^α) ≥ ηK}`.
///
/// ESS of tempered weights is nonincreasing in α and equals `K` at α = 0, so
/// the feasible set is an interval `[0, α*]`. If α = 1 is feasible the
/// weights are returned untouched with `alpha_star == 1.0`. Otherwise α* is
/// bracketed by bisection and the feasible end of the final bracket is
/// returned, which guarantees `ESS ≥ ηK` for the output weights.
pub fn regularize_weights(lw: &LogWeights, eta: f64) -> Result<RegularizedWeights> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidInput(format!("eta must lie in (0, 1], got {eta}")));
    }
    let target = eta * lw.len() as f64;
    let feasible = |alpha: f64| tempered_ess(lw, alpha) >= target;

    if feasible(1.0) {
        return Ok(RegularizedWeights {
            alpha_star: 1.0,
            weights: self_normalize(lw),
        });
    }

    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..ALPHA_MAX_ITERATIONS {
        if hi - lo <= ALPHA_TOLERANCE {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RegularizedWeights {
        alpha_star: lo,
        weights: NormalizedWeights(softmax_scaled(&lw.0, lo)),
    })
}
