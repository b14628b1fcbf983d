//! Browser bindings for the demo page in `www/`.

use aisle::estimators::GradientTarget;
use aisle::harness::{generate_replicate_data, replicate_init_phi, run_replicate_from, snr_reference_problem, snr_sweep, ExperimentConfig, Scenario};
use aisle::importance::{ess, regularize_weights, self_normalize, LogWeights};
use aisle::{EstimatorKind, OptimizerKind};
use wasm_bindgen::prelude::*;

const MAX_SNR_WORK: usize = 20_000_000;
const MAX_RUN_WORK: usize = 50_000_000;

#[wasm_bindgen]
pub struct Tempered {
    alpha_star: f64,
    ess_before: f64,
    ess_after: f64,
    weights: Vec<f64>,
}

#[wasm_bindgen]
impl Tempered {
    #[wasm_bindgen(getter)]
    pub fn alpha_star(&self) -> f64 {
        self.alpha_star
    }

    #[wasm_bindgen(getter)]
    pub fn ess_before(&self) -> f64 {
        self.ess_before
    }

    #[wasm_bindgen(getter)]
    pub fn ess_after(&self) -> f64 {
        self.ess_after
    }

    #[wasm_bindgen(getter)]
    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone()
    }
}

pub fn temper(log_weights: Vec<f64>, eta: f64) -> Result<Tempered, String> {
    let lw = LogWeights::new(log_weights).map_err(|e| e.to_string())?;
    let before = ess(&self_normalize(&lw));
    let reg = regularize_weights(&lw, eta).map_err(|e| e.to_string())?;
    Ok(Tempered {
        alpha_star: reg.alpha_star,
        ess_before: before,
        ess_after: ess(&reg.weights),
        weights: reg.weights.as_slice().to_vec(),
    })
}

/// Median-over-components SNR at each `K`.
pub fn snr_values(target: &str, d: usize, ks: &[usize], m: usize, seed: u64) -> Result<Vec<f64>, String> {
    let target: GradientTarget = target.parse().map_err(|e: aisle::Error| e.to_string())?;
    let work: usize = ks.iter().sum::<usize>().saturating_mul(m).saturating_mul(d * d + 2 * d);
    if work > MAX_SNR_WORK {
        return Err("sweep too large for the browser; lower M, K or D".into());
    }
    let (model, phi, x) = snr_reference_problem(Scenario::Diagonal, d, seed).map_err(|e| e.to_string())?;
    let table = snr_sweep(&model, &phi, &x, &[target], ks, m, seed).map_err(|e| e.to_string())?;
    Ok(table.rows.iter().map(|r| r.median_snr).collect())
}

/// Error trajectory of a single replicate.
#[allow(clippy::too_many_arguments)]
pub fn trajectory(
    estimator: &str,
    optimizer: &str,
    scenario: &str,
    d: usize,
    k: usize,
    n: usize,
    iterations: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let config = ExperimentConfig {
        scenario: scenario.parse().map_err(|e: aisle::Error| e.to_string())?,
        d,
        k,
        n,
        estimator: estimator.parse::<EstimatorKind>().map_err(|e| e.to_string())?,
        optimizer: optimizer.parse::<OptimizerKind>().map_err(|e| e.to_string())?,
        eta: None,
        iterations,
        replicates: 1,
        master_seed: seed,
    };
    config.validate().map_err(|e| e.to_string())?;
    if iterations.saturating_mul(n).saturating_mul(k).saturating_mul(d * d + 2 * d) > MAX_RUN_WORK {
        return Err("run too large for the browser; lower iterations, N, K or D".into());
    }
    let data = generate_replicate_data(&config, 0).map_err(|e| e.to_string())?;
    let phi0 = replicate_init_phi(&config, 0);
    let t = run_replicate_from(&config, 0, &data, phi0).map_err(|e| e.to_string())?;
    Ok(t.0)
}

#[wasm_bindgen]
pub fn temper_weights(log_weights: Vec<f64>, eta: f64) -> Result<Tempered, JsError> {
    temper(log_weights, eta).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn snr_curve(target: &str, d: usize, ks: Vec<u32>, m: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    let ks: Vec<usize> = ks.into_iter().map(|k| k as usize).collect();
    snr_values(target, d, &ks, m, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn error_trajectory(
    estimator: &str,
    optimizer: &str,
    scenario: &str,
    d: usize,
    k: usize,
    n: usize,
    iterations: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    trajectory(estimator, optimizer, scenario, d, k, n, iterations, seed as u64).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temper_two_particles() {
        let t = temper(vec![0.0, -1000.0], 0.8).unwrap();
        assert!((t.alpha_star - 3f64.ln() / 1000.0).abs() < 1e-7);
        assert!(t.ess_after >= 1.6 - 1e-9);
        assert!(t.ess_before < 1.0 + 1e-12);
        assert!(temper(vec![], 0.5).is_err());
    }

    #[test]
    fn snr_curve_has_one_value_per_k() {
        let v = snr_values("iwae", 1, &[1, 4], 100, 0).unwrap();
        assert_eq!(v.len(), 2);
        assert!(snr_values("nope", 1, &[1], 100, 0).is_err());
        assert!(snr_values("iwae", 10, &[1000], 100_000, 0).is_err());
    }

    #[test]
    fn trajectory_length() {
        let t = trajectory("aisle_kl", "adam", "diagonal", 2, 5, 3, 10, 1).unwrap();
        assert_eq!(t.len(), 11);
        assert!(trajectory("aisle_kl", "adam", "sphere", 2, 5, 3, 10, 1).is_err());
    }
}
