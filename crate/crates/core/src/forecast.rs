//! Ensemble forecasting from one initial condition.
//!
//! Member `m` draws all of its randomness (initialization and sampling) from
//! its own stream `member_rng(seed, m)`, so members are independent and the
//! output does not depend on how members are scheduled across threads.

use ndarray::{Array3, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::denoiser::Denoiser;
use crate::error::Result;
use crate::init::{build_init_window, Initializer, NextStepForecaster};
use crate::metrics::EnsembleForecast;
use crate::noise_prior::NoisePriorConfig;
use crate::rng::member_rng;
use crate::sampler::{rollout, SamplerConfig};
use crate::schedule::NoiseSchedule;

/// Everything the rolling sampler needs besides the initial condition.
#[derive(Clone, Copy)]
pub struct RollingForecaster<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub prior: NoisePriorConfig,
    pub init: Initializer<'a>,
}

impl RollingForecaster<'_> {
    /// `members x horizon x D` forecast from `y0`. `future` is the truth
    /// after `y0`, used only by truth initialization.
    pub fn ensemble(
        &self,
        y0: ArrayView1<f64>,
        future: Option<ArrayView2<f64>>,
        members: usize,
        seed: u64,
    ) -> Result<EnsembleForecast> {
        let runs: Result<Vec<_>> = (0..members)
            .into_par_iter()
            .map(|m| {
                let mut rng = member_rng(seed, m as u64);
                let init = build_init_window(&self.init, y0, self.schedule.window, future, &mut rng)?;
                rollout(
                    self.denoiser,
                    &self.schedule,
                    &self.sampler,
                    init.view(),
                    &self.prior,
                    &mut rng,
                    None,
                )
            })
            .collect();
        stack(runs?)
    }
}

/// Autoregressive ensemble from a next-step model.
pub fn next_step_ensemble(
    model: &dyn NextStepForecaster,
    y0: ArrayView1<f64>,
    horizon: usize,
    members: usize,
    seed: u64,
) -> Result<EnsembleForecast> {
    let runs: Result<Vec<_>> = (0..members)
        .into_par_iter()
        .map(|m| model.rollout(y0, horizon, &mut member_rng(seed, m as u64)))
        .collect();
    stack(runs?)
}

fn stack(runs: Vec<ndarray::Array2<f64>>) -> Result<EnsembleForecast> {
    let views: Vec<_> = runs.iter().map(|r| r.view()).collect();
    let members: Array3<f64> = ndarray::stack(Axis(0), &views)
        .map_err(|e| crate::error::Error::Shape(e.to_string()))?;
    let seeds = (0..runs.len() as u64).collect();
    EnsembleForecast::new(members, seeds)
}
