//! Gradient-ascent update rules with step size `i^{-1/2}` at step `i`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OptimizerKind {
    /// Plain ascent on the L1-normalised gradient.
    SgaL1,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::SgaL1 => "sga_l1",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "sga_l1" | "sga" => Ok(OptimizerKind::SgaL1),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::InvalidInput(format!("unknown optimizer '{s}'"))),
        }
    }
}

impl TryFrom<String> for OptimizerKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OptimizerKind> for String {
    fn from(kind: OptimizerKind) -> String {
        kind.name().to_string()
    }
}

/// Mutable optimizer state. `iteration` is the index of the next step (starts at 1).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub iteration: u64,
    m: DVector<f64>,
    v: DVector<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        Self {
            kind,
            iteration: 1,
            m: DVector::zeros(n_params),
            v: DVector::zeros(n_params),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        (self.iteration as f64).powf(-0.5)
    }

    /// Moves `params` along the ascent direction `grad` and advances the
    /// iteration counter. A zero gradient leaves SGA parameters unchanged.
    pub fn step(&mut self, params: &mut DVector<f64>, grad: &DVector<f64>) -> Result<()> {
        check_dim(params.len(), grad.len())?;
        check_dim(self.m.len(), grad.len())?;
        if grad.iter().any(|g| g.is_nan()) {
            return Err(Error::InvalidInput(format!(
                "NaN gradient at iteration {}",
                self.iteration
            )));
        }
        let lr = self.learning_rate();
        match self.kind {
            OptimizerKind::SgaL1 => {
                let l1 = grad.lp_norm(1);
                if l1 > 0.0 {
                    params.axpy(lr / l1, grad, 1.0);
                }
            }
            OptimizerKind::Adam => {
                let t = self.iteration as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..grad.len() {
                    let g = grad[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] += lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                }
            }
        }
        self.iteration += 1;
        Ok(())
    }
}
