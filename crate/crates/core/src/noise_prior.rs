//! Unit-variance slot noise, optionally correlated along the window.
//!
//! With strength `alpha`, slot `k > 1` receives
//! `eps_k = a * eps_{k-1} + sqrt(1 - a^2) * z_k` where `a = alpha / sqrt(1 + alpha^2)`,
//! so every slot is marginally `N(0, I)` and the lag-`j` correlation is `a^j`.
//! `alpha = 0` gives independent slots.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{standard_normal, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePriorConfig {
    pub alpha: f64,
}

impl Default for NoisePriorConfig {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

impl NoisePriorConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        let c = Self { alpha };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", format!("must be nonnegative, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Weight carried over from the previous slot, `alpha / sqrt(1 + alpha^2)`.
    pub fn carry(&self) -> f64 {
        self.alpha / (1.0 + self.alpha * self.alpha).sqrt()
    }

    /// Standard deviation of the fresh component, `1 / sqrt(1 + alpha^2)`.
    pub fn fresh_std(&self) -> f64 {
        1.0 / (1.0 + self.alpha * self.alpha).sqrt()
    }

    /// A `slots x dim` block of noise whose first row is a fresh draw.
    pub fn sample_window_noise(&self, slots: usize, dim: usize, rng: &mut SimRng) -> Array2<f64> {
        let mut out = Array2::zeros((slots, dim));
        if slots == 0 {
            return out;
        }
        for v in out.row_mut(0) {
            *v = standard_normal(rng);
        }
        for k in 1..slots {
            let prev = out.row(k - 1).to_owned();
            let next = self.sample_appended_noise(prev.view(), rng);
            out.row_mut(k).assign(&next);
        }
        out
    }

    /// Continues the chain by one slot after `previous`.
    pub fn sample_appended_noise(&self, previous: ArrayView1<f64>, rng: &mut SimRng) -> Array1<f64> {
        let (a, b) = (self.carry(), self.fresh_std());
        previous.mapv(|p| a * p + b * standard_normal(rng))
    }
}
