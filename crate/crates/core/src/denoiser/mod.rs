//! Denoisers map a noisy window plus per-slot noise levels to an estimate of
//! the clean window.
//!
//! * [`GaussianOracle`] is the exact posterior mean for i.i.d. Gaussian data
//!   and is used throughout the tests as ground truth.
//! * [`PrecondNet`] wraps a trainable [`Mlp`] in the EDM preconditioning.
//! * [`padded_denoise`] applies any denoiser to the currently active
//!   sub-window of a padded rolling window.

mod mlp;
mod net;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

pub use mlp::{Mlp, Tape};
pub use net::{NetConfig, PrecondNet};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub trait Denoiser: Send + Sync {
    /// Clean estimate of a `W x D` window whose slot `w` carries noise `sigmas[w]`.
    fn denoise(&self, noisy: ArrayView2<f64>, sigmas: &[f64]) -> Result<Array2<f64>>;
}

/// A denoiser that additionally takes a conditioning vector (e.g. the last
/// known clean state for the next-step baseline).
pub trait ContextDenoiser: Send + Sync {
    fn context_dim(&self) -> usize;

    fn denoise_with_context(
        &self,
        noisy: ArrayView2<f64>,
        sigmas: &[f64],
        context: ArrayView1<f64>,
    ) -> Result<Array2<f64>>;
}

/// A [`ContextDenoiser`] with its context fixed.
pub struct Bound<'a, C: ?Sized> {
    inner: &'a C,
    context: Array1<f64>,
}

impl<'a, C: ContextDenoiser + ?Sized> Bound<'a, C> {
    pub fn new(inner: &'a C, context: Array1<f64>) -> Result<Self> {
        if context.len() != inner.context_dim() {
            return Err(Error::Shape(format!(
                "context of length {} for a denoiser expecting {}",
                context.len(),
                inner.context_dim()
            )));
        }
        Ok(Self { inner, context })
    }
}

impl<C: ContextDenoiser + ?Sized> Denoiser for Bound<'_, C> {
    fn denoise(&self, noisy: ArrayView2<f64>, sigmas: &[f64]) -> Result<Array2<f64>> {
        self.inner.denoise_with_context(noisy, sigmas, self.context.view())
    }
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn denoise(&self, noisy: ArrayView2<f64>, sigmas: &[f64]) -> Result<Array2<f64>> {
        (**self).denoise(noisy, sigmas)
    }
}

/// Snapshots of a (possibly noisy) window at global diffusion time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub snapshots: Array2<f64>,
    pub t: f64,
}

impl Window {
    pub fn new(snapshots: Array2<f64>, t: f64) -> Result<Self> {
        if snapshots.nrows() == 0 || snapshots.ncols() == 0 {
            return Err(Error::Shape("window needs at least one slot and one channel".into()));
        }
        if !snapshots.iter().all(|v| v.is_finite()) {
            return Err(Error::Precondition("window contains non-finite values".into()));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Precondition(format!("diffusion time {t} outside [0, 1]")));
        }
        Ok(Self { snapshots, t })
    }

    pub fn len(&self) -> usize {
        self.snapshots.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.snapshots.ncols()
    }

    /// Noise levels this window carries under `schedule`.
    pub fn sigmas(&self, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        if self.len() != schedule.window {
            return Err(Error::Shape(format!(
                "window of {} slots under a schedule of size {}",
                self.len(),
                schedule.window
            )));
        }
        schedule.sigma_vec(self.t)
    }

    pub fn denoise(&self, denoiser: &dyn Denoiser, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
        denoiser.denoise(self.snapshots.view(), &self.sigmas(schedule)?)
    }
}

/// Exact posterior mean `mu + sd^2 / (sd^2 + sigma^2) * (x - mu)` for data
/// distributed as `N(mu, sd^2 I)` independently per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOracle {
    pub mean: Array1<f64>,
    pub sigma_data: f64,
}

impl GaussianOracle {
    pub fn new(mean: Array1<f64>, sigma_data: f64) -> Result<Self> {
        if !(sigma_data > 0.0) {
            return Err(Error::Precondition("oracle sigma_data must be positive".into()));
        }
        Ok(Self { mean, sigma_data })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            sigma_data: 1.0,
        }
    }

    pub fn denoise_window(&self, noisy: ArrayView2<f64>, sigmas: &[f64]) -> Result<Array2<f64>> {
        check_shapes(noisy, sigmas)?;
        if noisy.ncols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "oracle of dimension {} given snapshots of dimension {}",
                self.mean.len(),
                noisy.ncols()
            )));
        }
        let sd2 = self.sigma_data * self.sigma_data;
        let mut out = noisy.to_owned();
        for (mut row, &s) in out.axis_iter_mut(Axis(0)).zip(sigmas) {
            if !(s >= 0.0) {
                return Err(Error::Precondition(format!("noise level must be nonnegative, got {s}")));
            }
            let gain = sd2 / (sd2 + s * s);
            row.zip_mut_with(&self.mean, |x, &m| *x = m + gain * (*x - m));
        }
        Ok(out)
    }

    /// Exact score of the noisy marginal, `-(x - mu) / (sd^2 + sigma^2)`.
    pub fn score(&self, noisy: ArrayView1<f64>, sigma: f64) -> Array1<f64> {
        let v = self.sigma_data * self.sigma_data + sigma * sigma;
        (&self.mean - &noisy) / v
    }
}

impl Denoiser for GaussianOracle {
    fn denoise(&self, noisy: ArrayView2<f64>, sigmas: &[f64]) -> Result<Array2<f64>> {
        self.denoise_window(noisy, sigmas)
    }
}

/// Posterior mean for the linear-Gaussian transition `y1 | y0 ~ N(gain * y0, var I)`,
/// the exact next-step denoiser for an Ornstein-Uhlenbeck process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussianOracle {
    pub gain: f64,
    pub variance: f64,
    pub dim: usize,
}

impl ContextDenoiser for LinearGaussianOracle {
    fn context_dim(&self) -> usize {
        self.dim
    }

    fn denoise_with_context(
        &self,
        noisy: ArrayView2<f64>,
        sigmas: &[f64],
        context: ArrayView1<f64>,
    ) -> Result<Array2<f64>> {
        let oracle = GaussianOracle {
            mean: context.mapv(|v| v * self.gain),
            sigma_data: self.variance.sqrt(),
        };
        oracle.denoise_window(noisy, sigmas)
    }
}

fn check_shapes(noisy: ArrayView2<f64>, sigmas: &[f64]) -> Result<()> {
    if noisy.nrows() != sigmas.len() {
        return Err(Error::Shape(format!(
            "window has {} slots but {} noise levels",
            noisy.nrows(),
            sigmas.len()
        )));
    }
    Ok(())
}

/// Applies `denoiser` to slots `floor(t) + 1 ..= floor(t) + W` (1-based) of a
/// padded window, at the levels `sigma_vec(t - floor(t))`. All other rows are
/// returned unchanged.
pub fn padded_denoise(
    denoiser: &dyn Denoiser,
    padded: ArrayView2<f64>,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Precondition(format!("diffusion time must be nonnegative, got {t}")));
    }
    let shift = t.floor();
    let start = shift as usize;
    let end = start + schedule.window;
    if end > padded.nrows() {
        return Err(Error::Shape(format!(
            "active slots {}..={} exceed padded window of {} slots",
            start + 1,
            end,
            padded.nrows()
        )));
    }
    let sigmas = schedule.sigma_vec(t - shift)?;
    let active = denoiser.denoise(padded.slice(s![start..end, ..]), &sigmas)?;
    if active.dim() != (schedule.window, padded.ncols()) {
        return Err(Error::Shape(format!(
            "denoiser returned {:?}, expected {:?}",
            active.dim(),
            (schedule.window, padded.ncols())
        )));
    }
    let mut out = padded.to_owned();
    out.slice_mut(s![start..end, ..]).assign(&active);
    Ok(out)
}
