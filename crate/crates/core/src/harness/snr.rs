use nalgebra::DVector;

use super::Scenario;
use crate::error::{Error, Result};
use crate::estimators::{expected_gradient, GradientTarget};
use crate::gaussian::{ModelSpec, ProposalParams};
use crate::rng::{standard_normal, stream, Purpose};

/// Offset added to the optimal intercept by [`snr_reference_problem`].
pub const SNR_B_OFFSET: f64 = 0.5;
/// Offset added to the optimal log standard deviations.
pub const SNR_C_OFFSET: f64 = 0.25;

/// A fixed, non-optimal test point: `μ ~ N(0, I)`, one observation from the
/// model, and the posterior-matched proposal with its intercept and log
/// standard deviations shifted.
pub fn snr_reference_problem(
    scenario: Scenario,
    d: usize,
    seed: u64,
) -> Result<(ModelSpec, ProposalParams, DVector<f64>)> {
    if d == 0 {
        return Err(Error::InvalidInput("D must be positive".into()));
    }
    let mut rng = stream(seed, 0, 0, 0, Purpose::Data);
    let mu = DVector::from_fn(d, |_, _| standard_normal(&mut rng));
    let model = ModelSpec::new(mu, scenario.sigma(d))?;
    let l = model.sigma_cholesky().l();
    let z = model.mu() + l * DVector::from_fn(d, |_, _| standard_normal(&mut rng));
    let x = z + DVector::from_fn(d, |_, _| standard_normal(&mut rng));
    let mut phi = ProposalParams::posterior_matched(&model);
    phi.b.add_scalar_mut(SNR_B_OFFSET);
    phi.c.add_scalar_mut(SNR_C_OFFSET);
    Ok((model, phi, x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrRow {
    pub target: GradientTarget,
    pub k: usize,
    /// Median over gradient components of `|mean| / SD`.
    pub median_snr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrTable {
    pub rows: Vec<SnrRow>,
    /// Log-log slope of median SNR against `K`, one per target.
    pub slopes: Vec<(GradientTarget, f64)>,
}

impl SnrTable {
    pub fn slope(&self, target: GradientTarget) -> Option<f64> {
        self.slopes.iter().find(|(t, _)| *t == target).map(|(_, s)| *s)
    }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn fit_log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidInput("slope fit needs at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidInput("slope fit needs finite positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("slope fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

/// Median of the finite entries; components with zero spread are skipped.
fn finite_median(v: &DVector<f64>) -> f64 {
    let mut vals: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if vals.is_empty() {
        return f64::NAN;
    }
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

/// Per-component SNR of each target at each `K`, summarised by its median
/// over components, plus a log-log slope per target.
pub fn snr_sweep(
    model: &ModelSpec,
    phi: &ProposalParams,
    x: &DVector<f64>,
    targets: &[GradientTarget],
    k_grid: &[usize],
    m: usize,
    seed: u64,
) -> Result<SnrTable> {
    if m < 100 {
        return Err(Error::InvalidInput(format!("SNR sweep needs M >= 100, got {m}")));
    }
    if k_grid.is_empty() || k_grid.contains(&0) {
        return Err(Error::InvalidInput("K grid must be nonempty and positive".into()));
    }
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &target in targets {
        let mut medians = Vec::with_capacity(k_grid.len());
        for &k in k_grid {
            let moments = expected_gradient(target, model, phi, x, m, k, seed)?;
            let median_snr = finite_median(&moments.snr());
            medians.push(median_snr);
            rows.push(SnrRow { target, k, median_snr });
        }
        let ks: Vec<f64> = k_grid.iter().map(|&k| k as f64).collect();
        let slope = if k_grid.len() >= 2 {
            fit_log_log_slope(&ks, &medians).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        slopes.push((target, slope));
    }
    Ok(SnrTable { rows, slopes })
}
