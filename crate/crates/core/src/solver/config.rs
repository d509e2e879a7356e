use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Controls for the Picard iterations, windowing and truncation cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Fixed-point tolerance in weighted sup-norm over nodes and paths.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Weight `β_w` of the `e^{β_w t}` factor in the contraction distance.
    pub beta_weight: f64,
    /// Window length `h`; `None` uses the whole horizon.
    pub window: Option<f64>,
    /// Strictly increasing truncation levels `m_1 < m_2 < …`.
    pub schedule: Vec<f64>,
    /// Stop the cascade once two consecutive levels agree within `tolerance`.
    pub early_stop: bool,
    /// Exponent of the `S^p` distance recorded next to the sup distance.
    pub monitor_p: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iter: 50,
            beta_weight: 0.0,
            window: None,
            schedule: vec![2.0, 4.0, 8.0, 16.0],
            early_stop: true,
            monitor_p: 2.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.beta_weight >= 0.0) {
            return Err(Error::invalid(format!("beta_weight must be nonnegative, got {}", self.beta_weight)));
        }
        if let Some(h) = self.window {
            if !(h > 0.0 && h <= horizon * (1.0 + 1e-12)) {
                return Err(Error::invalid(format!("window {h} must lie in (0, {horizon}]")));
            }
        }
        if self.schedule.is_empty() {
            return Err(Error::invalid("truncation schedule is empty"));
        }
        if self.schedule.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::invalid("truncation levels must be positive"));
        }
        if self.schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!("truncation schedule {:?} is not strictly increasing", self.schedule)));
        }
        if !(self.monitor_p >= 1.0) {
            return Err(Error::invalid(format!("monitor_p must be at least 1, got {}", self.monitor_p)));
        }
        Ok(())
    }
}

/// Starting point of the outer (anticipated) iteration on each window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    #[default]
    Zero,
    Constant(f64),
}
