//! Experiment steps shared by the command line and the test suites: data
//! generation, training the configured model, and ensemble forecasts from
//! evenly spaced start dates.
//!
//! Seeding: `RunConfig::seed` drives data generation and forecasting,
//! `TrainingConfig::seed` drives network initialization and batch sampling.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::denoiser::PrecondNet;
use crate::dynamics::{make_windows, simulate, Dataset, Standardizer, SystemSpec};
use crate::error::{Error, Result};
use crate::forecast::{next_step_ensemble, RollingForecaster};
use crate::init::{build_init_window, NextStepForecaster};
use crate::io::{read_f64, read_matrix, to_f32, write_array, ArrayHeader};
use crate::metrics::EnsembleForecast;
use crate::rng::{derive_seed, member_rng};
use crate::sampler::{rollout, SamplerConfig, TraceRow};
use crate::training::{train_edm_baseline, train_erdm, ModelKind, StepHook, Trainer};

pub const TRAJECTORY_KIND: &str = "trajectory";
pub const FORECAST_KIND: &str = "forecast";

/// Split boundaries and system stored alongside a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub system: SystemSpec,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// What a forecast file holds besides the members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastMeta {
    pub model: ModelKind,
    /// Trajectory index of each start's initial condition.
    pub starts: Vec<usize>,
    /// Run seed; start `s` uses `start_seed(seed, s)` and member `m` its stream `m`.
    pub seed: u64,
}

/// Simulates `cfg.data.n_steps` snapshots and splits them.
pub fn generate(cfg: &RunConfig) -> Result<Dataset> {
    let traj = simulate(&cfg.system, cfg.data.n_steps, derive_seed(cfg.seed, "generate"))?;
    Dataset::new(traj, cfg.data.train_frac, cfg.data.val_frac)
}

pub fn save_dataset(path: &Path, data: &Dataset, system: &SystemSpec, config_hash: Option<String>) -> Result<()> {
    let mut h = ArrayHeader::new(TRAJECTORY_KIND, vec![data.trajectory.nrows(), data.dim()]);
    h.channels = system.channel_names();
    h.stats = Some(data.stats.clone());
    h.config_hash = config_hash;
    let meta = TrajectoryMeta {
        system: *system,
        train: data.train.clone(),
        val: data.val.clone(),
        test: data.test.clone(),
    };
    h.extra = serde_json::to_value(meta).map_err(|e| Error::format(path, e.to_string()))?;
    write_array(path, &h, &to_f32(data.trajectory.iter().copied()))
}

pub fn load_dataset(path: &Path) -> Result<(Dataset, SystemSpec)> {
    let (h, trajectory) = read_matrix(path)?;
    if h.kind != TRAJECTORY_KIND {
        return Err(Error::format(path, format!("expected a trajectory, found {:?}", h.kind)));
    }
    let stats = h.stats.ok_or_else(|| Error::format(path, "trajectory has no standardization stats"))?;
    let meta: TrajectoryMeta =
        serde_json::from_value(h.extra).map_err(|e| Error::format(path, format!("trajectory metadata: {e}")))?;
    let n = trajectory.nrows();
    if meta.train.end > meta.val.start || meta.val.end > meta.test.start || meta.test.end > n {
        return Err(Error::format(path, "split ranges do not fit the trajectory"));
    }
    if stats.dim() != trajectory.ncols() {
        return Err(Error::format(path, "stats do not match the channel count"));
    }
    let data = Dataset {
        trajectory,
        stats,
        train: meta.train,
        val: meta.val,
        test: meta.test,
    };
    Ok((data, meta.system))
}

/// Freshly initialized network for `cfg.model`.
pub fn new_network(cfg: &RunConfig) -> Result<PrecondNet> {
    PrecondNet::new(cfg.net_config(), &mut member_rng(derive_seed(cfg.training.seed, "init"), 0))
}

/// Trains the model selected by `cfg.model.kind` on the training split.
pub fn train(cfg: &RunConfig, data: &Dataset, hook: Option<&mut StepHook<'_>>) -> Result<Trainer> {
    if data.dim() != cfg.system.dim() {
        return Err(Error::Shape(format!(
            "{}-channel data for a {}-dimensional system",
            data.dim(),
            cfg.system.dim()
        )));
    }
    let series = data.standardized(data.train.clone())?;
    let mut trainer = Trainer::new(new_network(cfg)?, cfg.training.clone())?;
    match cfg.model.kind {
        ModelKind::Erdm => {
            let windows = make_windows(series.view(), cfg.schedule.window)?;
            train_erdm(&mut trainer, &windows, &cfg.schedule, &cfg.weighting, &cfg.noise_prior, hook)?;
        }
        ModelKind::EdmBaseline => {
            let pairs = make_windows(series.view(), 1)?;
            train_edm_baseline(&mut trainer, &pairs, &cfg.weighting, hook)?;
        }
    }
    Ok(trainer)
}

/// Checkpoint of the trainer's EMA network.
pub fn checkpoint(cfg: &RunConfig, trainer: &Trainer) -> Checkpoint {
    Checkpoint::new(
        cfg.model.kind,
        trainer.net(),
        trainer.ema_params(),
        cfg.schedule,
        cfg.weighting,
        trainer.step(),
    )
}

/// `n` start indices into a series of length `len`, evenly spaced so that
/// each is followed by at least `horizon` snapshots.
pub fn eval_starts(len: usize, horizon: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::config("eval.n_starts", "must be at least 1"));
    }
    if len < horizon + n {
        return Err(Error::Shape(format!(
            "a series of {len} snapshots cannot hold {n} starts with a horizon of {horizon}"
        )));
    }
    let last = len - horizon - 1;
    if n == 1 {
        return Ok(vec![0]);
    }
    Ok((0..n).map(|i| i * last / (n - 1)).collect())
}

/// Seed of the ensemble launched from series index `start`.
pub fn start_seed(seed: u64, start: usize) -> u64 {
    derive_seed(seed, &format!("start-{start}"))
}

#[derive(Clone, Copy)]
pub enum Forecaster<'a> {
    Rolling(RollingForecaster<'a>),
    NextStep(&'a dyn NextStepForecaster),
}

impl Forecaster<'_> {
    pub fn model(&self) -> ModelKind {
        match self {
            Forecaster::Rolling(_) => ModelKind::Erdm,
            Forecaster::NextStep(_) => ModelKind::EdmBaseline,
        }
    }
}

/// Ensemble forecasts of `horizon` snapshots from each start of `series`
/// (standardized), with the matching true continuations.
pub fn forecast_starts(
    model: &Forecaster<'_>,
    series: ArrayView2<f64>,
    starts: &[usize],
    horizon: usize,
    members: usize,
    seed: u64,
) -> Result<(Vec<EnsembleForecast>, Vec<Array2<f64>>)> {
    let mut forecasts = Vec::with_capacity(starts.len());
    let mut truths = Vec::with_capacity(starts.len());
    for &st in starts {
        if st + horizon >= series.nrows() {
            return Err(Error::Shape(format!("start {st} has fewer than {horizon} successors")));
        }
        let y0 = series.row(st);
        let future = series.slice(s![st + 1.., ..]);
        let seed = start_seed(seed, st);
        let f = match model {
            Forecaster::Rolling(r) => {
                let r = RollingForecaster {
                    sampler: SamplerConfig { horizon, ..r.sampler },
                    ..*r
                };
                r.ensemble(y0, Some(future), members, seed)?
            }
            Forecaster::NextStep(m) => next_step_ensemble(*m, y0, horizon, members, seed)?,
        };
        forecasts.push(f);
        truths.push(future.slice(s![..horizon, ..]).to_owned());
    }
    Ok((forecasts, truths))
}

/// Re-runs member 0 of the rolling ensemble launched from `start` (as in
/// [`forecast_starts`]) and records the sampler's per-iteration trace.
pub fn trace_first_member(
    forecaster: &RollingForecaster<'_>,
    series: ArrayView2<f64>,
    start: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    if start + horizon >= series.nrows() {
        return Err(Error::Shape(format!("start {start} has fewer than {horizon} successors")));
    }
    let future = series.slice(s![start + 1.., ..]);
    let mut rng = member_rng(start_seed(seed, start), 0);
    let init = build_init_window(
        &forecaster.init,
        series.row(start),
        forecaster.schedule.window,
        Some(future),
        &mut rng,
    )?;
    let sampler = SamplerConfig {
        horizon,
        ..forecaster.sampler
    };
    let mut rows = Vec::new();
    rollout(
        forecaster.denoiser,
        &forecaster.schedule,
        &sampler,
        init.view(),
        &forecaster.prior,
        &mut rng,
        Some(&mut rows),
    )?;
    Ok(rows)
}

/// Writes `starts x members x horizon x D` forecasts, destandardized with
/// `stats`.
pub fn save_forecasts(
    path: &Path,
    forecasts: &[EnsembleForecast],
    meta: &ForecastMeta,
    stats: &Standardizer,
    channels: Vec<String>,
    config_hash: Option<String>,
) -> Result<()> {
    let first = forecasts
        .first()
        .ok_or_else(|| Error::Shape("no forecasts to write".into()))?;
    let (m, t, d) = first.members.dim();
    if meta.starts.len() != forecasts.len() || forecasts.iter().any(|f| f.members.dim() != (m, t, d)) {
        return Err(Error::Shape("forecasts must share a shape and match the start list".into()));
    }
    let mut data = Vec::with_capacity(forecasts.len() * m * t * d);
    for f in forecasts {
        for member in f.members.outer_iter() {
            data.extend(to_f32(stats.destandardize(member)?.iter().copied()));
        }
    }
    let mut h = ArrayHeader::new(FORECAST_KIND, vec![forecasts.len(), m, t, d]);
    h.channels = channels;
    h.stats = Some(stats.clone());
    h.config_hash = config_hash;
    h.extra = serde_json::to_value(meta).map_err(|e| Error::format(path, e.to_string()))?;
    write_array(path, &h, &data)
}

/// Reads a forecast file back into standardized units.
pub fn load_forecasts(path: &Path) -> Result<(Vec<EnsembleForecast>, ForecastMeta, Standardizer)> {
    let (h, data) = read_f64(path)?;
    if h.kind != FORECAST_KIND || h.shape.len() != 4 {
        return Err(Error::format(path, format!("expected a 4-d forecast, found {:?} {:?}", h.kind, h.shape)));
    }
    let stats = h.stats.ok_or_else(|| Error::format(path, "forecast has no standardization stats"))?;
    let meta: ForecastMeta =
        serde_json::from_value(h.extra).map_err(|e| Error::format(path, format!("forecast metadata: {e}")))?;
    let (n, m, t, d) = (h.shape[0], h.shape[1], h.shape[2], h.shape[3]);
    if meta.starts.len() != n || stats.dim() != d {
        return Err(Error::format(path, "metadata does not match the payload shape"));
    }
    let data = data
        .into_shape_with_order((n, m, t, d))
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut forecasts = Vec::with_capacity(n);
    for block in data.outer_iter() {
        let mut members = Array3::zeros((m, t, d));
        for (mut dst, src) in members.outer_iter_mut().zip(block.outer_iter()) {
            dst.assign(&stats.standardize(src)?);
        }
        forecasts.push(EnsembleForecast::new(members, (0..m as u64).collect())?);
    }
    Ok((forecasts, meta, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::LinearGaussianStep;

    #[test]
    fn starts_are_spread_and_leave_room() {
        assert_eq!(eval_starts(100, 9, 3).unwrap(), vec![0, 45, 90]);
        assert_eq!(eval_starts(10, 9, 1).unwrap(), vec![0]);
        assert!(eval_starts(10, 9, 2).is_err());
        assert!(eval_starts(10, 2, 0).is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let mut cfg = RunConfig {
            members: 2,
            ..Default::default()
        };
        cfg.system = SystemSpec::ou(0.5, 1.0, 2, 0.5);
        cfg.data.n_steps = 200;
        let data = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.rdf");
        save_dataset(&p, &data, &cfg.system, Some(cfg.hash())).unwrap();
        let (back, system) = load_dataset(&p).unwrap();
        assert_eq!(system, cfg.system);
        assert_eq!((back.train.clone(), back.val.clone(), back.test.clone()), (0..140, 140..160, 160..200));
        assert_eq!(back.stats, data.stats);
        let rounded = data.trajectory.mapv(|v| v as f32 as f64);
        assert_eq!(back.trajectory, rounded);
    }

    #[test]
    fn next_step_forecasts_pair_with_truth() {
        let series = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let step = LinearGaussianStep {
            decay: 1.0,
            noise_sd: 0.0,
            dim: 1,
        };
        let (f, y) = forecast_starts(&Forecaster::NextStep(&step), series.view(), &[0, 10], 5, 3, 0).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(y[1].column(0).to_vec(), vec![11.0, 12.0, 13.0, 14.0, 15.0]);
        assert!(f[1].members.iter().all(|&v| v == 10.0));
        assert!(forecast_starts(&Forecaster::NextStep(&step), series.view(), &[15], 5, 3, 0).is_err());
    }

    #[test]
    fn forecast_file_round_trip() {
        let stats = Standardizer {
            mean: vec![1.0, -2.0],
            std: vec![2.0, 0.5],
        };
        let f: Vec<EnsembleForecast> = (0..2)
            .map(|i| {
                let m = Array3::from_shape_fn((3, 4, 2), |(a, b, c)| (i * 24 + a * 8 + b * 2 + c) as f64 * 0.25);
                EnsembleForecast::new(m, vec![0, 1, 2]).unwrap()
            })
            .collect();
        let meta = ForecastMeta {
            model: ModelKind::Erdm,
            starts: vec![5, 9],
            seed: 3,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.rdf");
        save_forecasts(&p, &f, &meta, &stats, vec!["a".into(), "b".into()], None).unwrap();
        let (back, m2, s2) = load_forecasts(&p).unwrap();
        assert_eq!((m2, s2), (meta.clone(), stats.clone()));
        assert_eq!(back, f);
        let bad = ForecastMeta { starts: vec![1], ..meta };
        assert!(save_forecasts(&p, &f, &bad, &stats, vec![], None).is_err());
    }

    #[test]
    fn trace_replays_member_zero() {
        let oracle = crate::denoiser::GaussianOracle::standard(1);
        let r = RollingForecaster {
            denoiser: &oracle,
            schedule: crate::schedule::NoiseSchedule::default(),
            sampler: SamplerConfig::default(),
            prior: crate::noise_prior::NoisePriorConfig::default(),
            init: crate::init::Initializer::Truth,
        };
        let series = Array2::from_shape_fn((40, 1), |(i, _)| (i as f64 * 0.3).sin());
        let rows = trace_first_member(&r, series.view(), 2, 8, 5).unwrap();
        let emitted: usize = rows.iter().map(|t| t.n_clean).sum();
        assert!(emitted >= 8);
        assert_eq!(rows[0].iteration, 0);
        assert_eq!(rows[0].t_cur, 0.0);
    }
}
