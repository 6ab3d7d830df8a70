//! First-window initialization.
//!
//! The rolling sampler starts from clean estimates of the first `W`
//! snapshots, which it corrupts with the `t = 0` levels. They come from an
//! external next-step forecaster, from repeating the initial condition, or
//! (for evaluation only) from the true future.

use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::denoiser::PrecondNet;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, SimRng};
use crate::sampler::{edm_baseline_sample, BaselineSamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    ExternalForecaster,
    Persistence,
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub kind: InitKind,
    /// Checkpoint of the next-step forecaster for `external_forecaster`.
    #[serde(default)]
    pub forecaster: Option<PathBuf>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            kind: InitKind::ExternalForecaster,
            forecaster: None,
        }
    }
}

/// A stochastic one-step model `y_{k+1} ~ p(. | y_k)`.
pub trait NextStepForecaster: Send + Sync {
    fn dim(&self) -> usize;

    fn next(&self, y: ArrayView1<f64>, rng: &mut SimRng) -> Result<Array1<f64>>;

    /// `steps` autoregressive draws starting after `y0`.
    fn rollout(&self, y0: ArrayView1<f64>, steps: usize, rng: &mut SimRng) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((steps, y0.len()));
        let mut cur = y0.to_owned();
        for k in 0..steps {
            cur = self.next(cur.view(), rng)?;
            out.row_mut(k).assign(&cur);
        }
        Ok(out)
    }
}

/// The trained conditional next-step diffusion model.
#[derive(Debug, Clone)]
pub struct EdmBaseline {
    pub net: PrecondNet,
    pub sampler: BaselineSamplerConfig,
}

impl NextStepForecaster for EdmBaseline {
    fn dim(&self) -> usize {
        self.net.config().dim
    }

    fn next(&self, y: ArrayView1<f64>, rng: &mut SimRng) -> Result<Array1<f64>> {
        edm_baseline_sample(&self.net, y, &self.sampler, rng)
    }
}

/// Exact sampler for `y' = decay * y + noise_sd * z` (e.g. an OU transition).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussianStep {
    pub decay: f64,
    pub noise_sd: f64,
    pub dim: usize,
}

impl NextStepForecaster for LinearGaussianStep {
    fn dim(&self) -> usize {
        self.dim
    }

    fn next(&self, y: ArrayView1<f64>, rng: &mut SimRng) -> Result<Array1<f64>> {
        Ok(y.mapv(|v| self.decay * v + self.noise_sd * standard_normal(rng)))
    }
}

#[derive(Clone, Copy)]
pub enum Initializer<'a> {
    External(&'a dyn NextStepForecaster),
    Persistence,
    Truth,
}

impl Initializer<'_> {
    pub fn kind(&self) -> InitKind {
        match self {
            Initializer::External(_) => InitKind::ExternalForecaster,
            Initializer::Persistence => InitKind::Persistence,
            Initializer::Truth => InitKind::Truth,
        }
    }
}

/// Clean estimates of the first `window` snapshots after `y0`.
///
/// `future` holds the true snapshots after `y0` and is required (only) for
/// [`Initializer::Truth`].
pub fn build_init_window(
    init: &Initializer<'_>,
    y0: ArrayView1<f64>,
    window: usize,
    future: Option<ArrayView2<f64>>,
    rng: &mut SimRng,
) -> Result<Array2<f64>> {
    if !y0.iter().all(|v| v.is_finite()) {
        return Err(Error::Precondition("initial condition is not finite".into()));
    }
    match init {
        Initializer::Persistence => Ok(Array2::from_shape_fn((window, y0.len()), |(_, j)| y0[j])),
        Initializer::External(f) => {
            if f.dim() != y0.len() {
                return Err(Error::Shape(format!("forecaster of dim {} for a {}-vector", f.dim(), y0.len())));
            }
            f.rollout(y0, window, rng)
        }
        Initializer::Truth => match future {
            Some(fut) if fut.nrows() >= window && fut.ncols() == y0.len() => {
                Ok(fut.slice(ndarray::s![..window, ..]).to_owned())
            }
            Some(fut) => Err(Error::Shape(format!(
                "truth initialization needs {window} future snapshots, got {:?}",
                fut.dim()
            ))),
            None => Err(Error::config(
                "init.kind",
                "truth initialization is only available when the true future is known",
            )),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::member_rng;
    use ndarray::array;

    #[test]
    fn persistence_repeats_y0() {
        let y0 = array![1.0, -2.0];
        let w = build_init_window(&Initializer::Persistence, y0.view(), 6, None, &mut member_rng(0, 0)).unwrap();
        assert_eq!(w.dim(), (6, 2));
        assert!(w.rows().into_iter().all(|r| r == y0));
    }

    #[test]
    fn truth_requires_future() {
        let y0 = array![0.0];
        let err = build_init_window(&Initializer::Truth, y0.view(), 3, None, &mut member_rng(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "init.kind"));
        let fut = array![[1.0], [2.0], [3.0], [4.0]];
        let w = build_init_window(&Initializer::Truth, y0.view(), 3, Some(fut.view()), &mut member_rng(0, 0)).unwrap();
        assert_eq!(w, array![[1.0], [2.0], [3.0]]);
        assert!(build_init_window(&Initializer::Truth, y0.view(), 5, Some(fut.view()), &mut member_rng(0, 0)).is_err());
    }

    #[test]
    fn external_forecaster_rolls_out() {
        let step = LinearGaussianStep { decay: 0.5, noise_sd: 0.0, dim: 1 };
        let y0 = array![8.0];
        let w = build_init_window(&Initializer::External(&step), y0.view(), 3, None, &mut member_rng(0, 0)).unwrap();
        assert_eq!(w, array![[4.0], [2.0], [1.0]]);
        let bad = array![f64::NAN];
        assert!(build_init_window(&Initializer::Persistence, bad.view(), 3, None, &mut member_rng(0, 0)).is_err());
    }
}
