//! Per-slot loss weights `lambda(sigma) * f(sigma; P_mean, P_std)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{standard_normal, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeighting {
    pub p_mean: f64,
    pub p_std: f64,
    pub sigma_data: f64,
    /// Multiply by the lognormal density. Disabling it leaves only `lambda`.
    #[serde(default = "yes")]
    pub lognormal: bool,
}

fn yes() -> bool {
    true
}

impl Default for LossWeighting {
    fn default() -> Self {
        Self {
            p_mean: 0.5,
            p_std: 1.2,
            sigma_data: 1.0,
            lognormal: true,
        }
    }
}

fn positive(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("noise level must be positive, got {sigma}")))
    }
}

impl LossWeighting {
    pub fn validate(&self) -> Result<()> {
        if !self.p_mean.is_finite() {
            return Err(Error::config("p_mean", "must be finite"));
        }
        if !(self.p_std > 0.0 && self.p_std.is_finite()) {
            return Err(Error::config("p_std", format!("must be positive, got {}", self.p_std)));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(Error::config("sigma_data", "must be positive"));
        }
        Ok(())
    }

    /// `(sigma^2 + sigma_data^2) / (sigma * sigma_data)^2`
    pub fn lambda(&self, sigma: f64) -> Result<f64> {
        positive(sigma)?;
        let sd2 = self.sigma_data * self.sigma_data;
        Ok((sigma * sigma + sd2) / (sigma * sigma * sd2))
    }

    pub fn lognormal_pdf(&self, sigma: f64) -> Result<f64> {
        positive(sigma)?;
        let z = (sigma.ln() - self.p_mean) / self.p_std;
        Ok((-0.5 * z * z).exp() / (sigma * self.p_std * (2.0 * std::f64::consts::PI).sqrt()))
    }

    /// Effective weight of a slot at noise level `sigma`.
    pub fn snapshot_weight(&self, sigma: f64) -> Result<f64> {
        let l = self.lambda(sigma)?;
        if self.lognormal {
            Ok(l * self.lognormal_pdf(sigma)?)
        } else {
            Ok(l)
        }
    }

    /// Draws `sigma` with `ln sigma ~ N(P_mean, P_std^2)`.
    pub fn sample_sigma(&self, rng: &mut SimRng) -> f64 {
        (self.p_mean + self.p_std * standard_normal(rng)).exp()
    }
}
