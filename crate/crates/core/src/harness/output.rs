use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{ExperimentResult, RunConfig, SnrTable};
use crate::rng::PRNG_ID;

pub const TRAJECTORY_CSV_HEADER: &str = "scenario,D,K,N,estimator,optimizer,eta,replicates,iteration,median_error";
pub const SNR_CSV_HEADER: &str = "estimator,K,median_snr,slope";

/// Plain decimal notation with 17 significant digits. Values whose decimal
/// exponent falls outside `[-5, 17)` use scientific notation instead.
pub fn format_sig17(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{v:.16e}");
    let exp: i32 = sci
        .rsplit('e')
        .next()
        .and_then(|e| e.parse().ok())
        .expect("exponent in scientific format");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        sci
    }
}

/// Writes one row per (cell, iteration).
pub fn write_trajectory_csv<W: Write>(mut out: W, results: &[ExperimentResult]) -> io::Result<()> {
    writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
    for res in results {
        let c = &res.config;
        let eta = c.eta.map(format_sig17).unwrap_or_else(|| "none".to_string());
        for (iteration, err) in res.median.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                c.scenario,
                c.d,
                c.k,
                c.n,
                c.estimator,
                c.optimizer,
                eta,
                c.replicates,
                iteration,
                format_sig17(*err)
            )?;
        }
    }
    Ok(())
}

/// One row per (target, K); `slope` repeats the target's fitted slope.
pub fn write_snr_csv<W: Write>(mut out: W, table: &SnrTable) -> io::Result<()> {
    writeln!(out, "{SNR_CSV_HEADER}")?;
    for row in &table.rows {
        let slope = table.slope(row.target).map(format_sig17).unwrap_or_else(|| "nan".into());
        writeln!(out, "{},{},{},{}", row.target, row.k, format_sig17(row.median_snr), slope)?;
    }
    Ok(())
}

/// JSON sidecar written next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub master_seed: u64,
    pub prng: String,
    pub ground_truth: String,
    pub version: String,
    pub config: RunConfig,
}

impl RunMetadata {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            master_seed: config.master_seed,
            prng: PRNG_ID.to_string(),
            ground_truth: "b* = P Sigma^-1 theta_ML (intercept of the exact posterior mean)".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
        }
    }
}
