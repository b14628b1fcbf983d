use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ExperimentConfig, Scenario};
use crate::estimators::EstimatorKind;
use crate::optim::OptimizerKind;

/// A configuration problem, naming the offending key.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("config key '{key}': {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

/// A scalar or a list; lists expand into a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

fn default_n() -> usize {
    25
}

fn default_iterations() -> usize {
    10_000
}

fn default_replicates() -> usize {
    250
}

/// JSON experiment description. `D`, `K` and `estimator` may be lists; the
/// run covers their Cartesian product (in `D`, `K`, `estimator` order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(rename = "D")]
    pub d: OneOrMany<usize>,
    #[serde(rename = "K")]
    pub k: OneOrMany<usize>,
    #[serde(rename = "N", default = "default_n")]
    pub n: usize,
    pub estimator: OneOrMany<EstimatorKind>,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
}

/// Pulls the key name out of serde_json's messages ("unknown field `x`",
/// "missing field `x`").
fn key_from_serde_message(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}

impl RunConfig {
    /// Parses and validates a config document. Accepts a run-metadata sidecar
    /// as well, in which case its embedded `config` is used.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("prng").is_some() => inner.clone(),
            _ => value,
        };
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().to_string();
            let key = if path.is_empty() || path == "." {
                key_from_serde_message(&msg)
            } else {
                path.split(['.', '[']).next().unwrap_or(&path).to_string()
            };
            ConfigError::new(&key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, values: &[usize]| {
            if values.is_empty() {
                Err(ConfigError::new(key, "must not be empty"))
            } else if values.contains(&0) {
                Err(ConfigError::new(key, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("D", &self.d.to_vec())?;
        positive("K", &self.k.to_vec())?;
        positive("N", &[self.n])?;
        positive("iterations", &[self.iterations])?;
        positive("replicates", &[self.replicates])?;
        if self.estimator.to_vec().is_empty() {
            return Err(ConfigError::new("estimator", "must not be empty"));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(ConfigError::new("eta", format!("must lie in (0, 1], got {eta}")));
            }
        }
        Ok(())
    }

    /// Expands list-valued keys into individual experiment cells.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let mut cells = Vec::new();
        for d in self.d.to_vec() {
            for k in self.k.to_vec() {
                for estimator in self.estimator.to_vec() {
                    cells.push(ExperimentConfig {
                        scenario: self.scenario,
                        d,
                        k,
                        n: self.n,
                        estimator,
                        optimizer: self.optimizer,
                        eta: self.eta,
                        iterations: self.iterations,
                        replicates: self.replicates,
                        master_seed: self.master_seed,
                    });
                }
            }
        }
        cells
    }
}
