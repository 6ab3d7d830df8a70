//! EDM preconditioning applied independently to every slot of a window.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preconditioner {
    pub sigma_data: f64,
}

impl Default for Preconditioner {
    fn default() -> Self {
        Self { sigma_data: 1.0 }
    }
}

fn positive(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("noise level must be positive, got {sigma}")))
    }
}

impl Preconditioner {
    pub fn new(sigma_data: f64) -> Result<Self> {
        if !(sigma_data > 0.0 && sigma_data.is_finite()) {
            return Err(Error::config("sigma_data", "must be positive"));
        }
        Ok(Self { sigma_data })
    }

    pub fn c_in(&self, sigma: f64) -> Result<f64> {
        positive(sigma)?;
        Ok(1.0 / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt())
    }

    pub fn c_skip(&self, sigma: f64) -> Result<f64> {
        positive(sigma)?;
        let sd2 = self.sigma_data * self.sigma_data;
        Ok(sd2 / (sigma * sigma + sd2))
    }

    pub fn c_out(&self, sigma: f64) -> Result<f64> {
        positive(sigma)?;
        Ok(sigma * self.sigma_data / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt())
    }

    pub fn c_noise(&self, sigma: f64) -> Result<f64> {
        positive(sigma)?;
        Ok(sigma.ln() / 4.0)
    }

    /// Per-slot coefficients for a vector of noise levels.
    pub fn coefficients(&self, sigmas: &[f64]) -> Result<SlotCoefficients> {
        let mut c = SlotCoefficients::default();
        for &s in sigmas {
            c.c_in.push(self.c_in(s)?);
            c.c_skip.push(self.c_skip(s)?);
            c.c_out.push(self.c_out(s)?);
            c.c_noise.push(self.c_noise(s)?);
        }
        Ok(c)
    }

    /// `D(x) = c_skip * x + c_out * F(c_in * x, c_noise)` row by row.
    ///
    /// `raw` receives the scaled `W x D` window together with all `W` noise
    /// embeddings and must return a `W x D` array.
    pub fn apply<F>(&self, noisy: ArrayView2<f64>, sigmas: &[f64], raw: F) -> Result<Array2<f64>>
    where
        F: FnOnce(ArrayView2<f64>, &[f64]) -> Result<Array2<f64>>,
    {
        if noisy.nrows() != sigmas.len() {
            return Err(Error::Shape(format!(
                "window has {} slots but {} noise levels",
                noisy.nrows(),
                sigmas.len()
            )));
        }
        let c = self.coefficients(sigmas)?;
        let mut scaled = noisy.to_owned();
        for (mut row, ci) in scaled.axis_iter_mut(Axis(0)).zip(&c.c_in) {
            row *= *ci;
        }
        let f = raw(scaled.view(), &c.c_noise)?;
        if f.dim() != noisy.dim() {
            return Err(Error::Shape(format!(
                "raw network returned {:?}, expected {:?}",
                f.dim(),
                noisy.dim()
            )));
        }
        let mut out = f;
        for (w, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let x = noisy.row(w);
            row.zip_mut_with(&x, |o, &xv| *o = c.c_skip[w] * xv + c.c_out[w] * *o);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotCoefficients {
    pub c_in: Vec<f64>,
    pub c_skip: Vec<f64>,
    pub c_out: Vec<f64>,
    pub c_noise: Vec<f64>,
}
