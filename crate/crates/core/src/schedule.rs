//! Progressive per-slot noise schedule.
//!
//! Slot `w` of a window of `W` snapshots sits at the local diffusion time
//! `t_w = 1 - (w - t) / W` of a single EDM-style curve
//!
//! ```text
//! sigma(u) = (sigma_max^(1/rho) + u * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho
//! ```
//!
//! so the `W` slots partition `[sigma_min, sigma_max]` into contiguous segments
//! and advancing the global time `t` by one moves every slot onto the starting
//! level of its predecessor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Curvature. Negative values concentrate the near-future slots at low noise.
    pub rho: f64,
    /// Window size `W`.
    pub window: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_min: 0.002,
            sigma_max: 200.0,
            rho: -10.0,
            window: 6,
        }
    }
}

impl NoiseSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64, rho: f64, window: usize) -> Result<Self> {
        let s = Self {
            sigma_min,
            sigma_max,
            rho,
            window,
        };
        s.validate()?;
        Ok(s)
    }

    /// The standard EDM curve (`rho = 7`, `sigma_max = 80`) with the given window.
    pub fn edm(window: usize) -> Self {
        Self {
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min.is_finite() && self.sigma_min > 0.0) {
            return Err(Error::config("sigma_min", format!("must be positive, got {}", self.sigma_min)));
        }
        if !(self.sigma_max.is_finite() && self.sigma_max > self.sigma_min) {
            return Err(Error::config(
                "sigma_max",
                format!("must exceed sigma_min ({}), got {}", self.sigma_min, self.sigma_max),
            ));
        }
        if !self.rho.is_finite() || self.rho == 0.0 {
            return Err(Error::config("rho", "must be finite and nonzero"));
        }
        if self.window == 0 {
            return Err(Error::config("window", "must be at least 1"));
        }
        Ok(())
    }

    /// Noise level at position `u` in `[0, 1]` along the full curve
    /// (`u = 0` gives `sigma_max`, `u = 1` gives `sigma_min`).
    ///
    /// Powers are taken as `exp(ln(x) / rho)`, valid for either sign of `rho`.
    pub fn sigma_at(&self, u: f64) -> f64 {
        let hi = (self.sigma_max.ln() / self.rho).exp();
        let lo = (self.sigma_min.ln() / self.rho).exp();
        let base = (1.0 - u) * hi + u * lo;
        (self.rho * base.ln()).exp()
    }

    fn local_time(&self, w: usize, t: f64) -> f64 {
        1.0 - (w as f64 - t) / self.window as f64
    }

    fn check(&self, w: usize, t: f64) -> Result<()> {
        if w == 0 || w > self.window {
            return Err(Error::Precondition(format!(
                "slot index {w} outside 1..={}",
                self.window
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Precondition(format!("diffusion time {t} outside [0, 1]")));
        }
        Ok(())
    }

    /// Noise level of slot `w` (1-based) at diffusion time `t`.
    pub fn sigma_bar(&self, w: usize, t: f64) -> Result<f64> {
        self.check(w, t)?;
        Ok(self.sigma_at(self.local_time(w, t)))
    }

    /// All `W` slot levels at time `t`, strictly increasing in the slot index.
    pub fn sigma_vec(&self, t: f64) -> Result<Vec<f64>> {
        (1..=self.window).map(|w| self.sigma_bar(w, t)).collect()
    }

    /// `d sigma_bar / dt` for slot `w`; negative everywhere.
    pub fn sigma_dot(&self, w: usize, t: f64) -> Result<f64> {
        self.check(w, t)?;
        let hi = (self.sigma_max.ln() / self.rho).exp();
        let lo = (self.sigma_min.ln() / self.rho).exp();
        let base = hi + self.local_time(w, t) * (lo - hi);
        Ok(self.rho * ((self.rho - 1.0) * base.ln()).exp() * (lo - hi) / self.window as f64)
    }

    /// Noise level of slot `w` (1-based) of a padded window at any global time
    /// `t >= 0`.
    ///
    /// With `k = floor(t)`, slots `w <= k` are finished (`sigma_min`), slots past
    /// `k + W` are pure-noise padding (`sigma_max`) and the rest follow
    /// `sigma_bar(w - k, t - k)`.
    pub fn slot_level(&self, w: usize, t: f64) -> f64 {
        let k = t.floor();
        let shift = k as usize;
        if w <= shift {
            self.sigma_min
        } else if w - shift > self.window {
            self.sigma_max
        } else {
            self.sigma_at(self.local_time(w - shift, t - k))
        }
    }

    /// `slot_level` for slots `1..=len`.
    pub fn slot_levels(&self, len: usize, t: f64) -> Vec<f64> {
        (1..=len).map(|w| self.slot_level(w, t)).collect()
    }
}
