//! Rolling samplers.
//!
//! The state is a window of `W` noisy slots followed by `n_pad` pure-noise
//! slots. Each iteration advances the global diffusion time by `dt = 1 / N`,
//! integrating every slot's probability-flow ODE from its current level to its
//! next level. Whenever the time crosses an integer the leading slots are
//! finished: their denoised estimates are emitted, they are dropped, fresh
//! `sigma_max` noise is appended and the time is wrapped back into `[0, 1)`.
//!
//! Slot derivatives `d = (x - D(x)) / sigma` come from
//! [`padded_denoise`](crate::denoiser::padded_denoise). Slots that are not in
//! the active range are either already finished (no drift) or still pure
//! noise, for which the exact flow is `x ∝ sigma` (drift `x / sigma`).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::denoiser::{padded_denoise, ContextDenoiser, Bound, Denoiser};
use crate::error::{Error, Result};
use crate::noise_prior::NoisePriorConfig;
use crate::rng::{standard_normal, SimRng};
use crate::schedule::NoiseSchedule;

/// States larger than this (standardized units) abort the rollout.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Tolerance used when snapping the diffusion time onto integers.
const TIME_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverOrder {
    Euler,
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Solver steps per emitted snapshot, `N`; may be fractional.
    pub steps_per_snapshot: f64,
    #[serde(default)]
    pub s_churn: f64,
    #[serde(default = "one")]
    pub s_noise: f64,
    pub order: SolverOrder,
    /// Number of snapshots to emit.
    pub horizon: usize,
}

fn one() -> f64 {
    1.0
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps_per_snapshot: 1.25,
            s_churn: 0.0,
            s_noise: 1.0,
            order: SolverOrder::Heun,
            horizon: 64,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.steps_per_snapshot > 0.0 && self.steps_per_snapshot.is_finite()) {
            return Err(Error::config("steps_per_snapshot", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.s_churn) {
            return Err(Error::config("s_churn", format!("must lie in [0, 1), got {}", self.s_churn)));
        }
        if !(self.s_noise > 0.0 && self.s_noise.is_finite()) {
            return Err(Error::config("s_noise", "must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps_per_snapshot
    }

    /// Step taken before backtracking with churn.
    pub fn dt_overshoot(&self) -> f64 {
        self.dt() / (1.0 - self.s_churn)
    }

    /// Pure-noise slots kept after the window, `floor(dt') + 1`.
    pub fn n_pad(&self) -> usize {
        self.dt_overshoot().floor() as usize + 1
    }
}

/// One row of the optional per-iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub t_cur: f64,
    pub levels: Vec<f64>,
    pub n_clean: usize,
}

fn snap(t: f64) -> f64 {
    let r = t.round();
    if (t - r).abs() < TIME_SNAP {
        r
    } else {
        t
    }
}

#[derive(Debug, Clone)]
pub struct RollingState {
    schedule: NoiseSchedule,
    window: Array2<f64>,
    levels: Vec<f64>,
    last_noise: Array1<f64>,
    t_cur: f64,
    emitted: Vec<Array1<f64>>,
    iteration: usize,
}

impl RollingState {
    /// Corrupts the clean estimates `init` (`W x D`) with the levels of
    /// `t = 0` and appends `n_pad` slots of `sigma_max` noise.
    pub fn initialize(
        schedule: &NoiseSchedule,
        cfg: &SamplerConfig,
        init: ArrayView2<f64>,
        prior: &NoisePriorConfig,
        rng: &mut SimRng,
    ) -> Result<Self> {
        schedule.validate()?;
        cfg.validate()?;
        if init.nrows() != schedule.window || init.ncols() == 0 {
            return Err(Error::Shape(format!(
                "initial window {:?} for a schedule of {} slots",
                init.dim(),
                schedule.window
            )));
        }
        if !init.iter().all(|v| v.is_finite()) {
            return Err(Error::Precondition("initial window contains non-finite values".into()));
        }
        let len = schedule.window + cfg.n_pad();
        let levels = schedule.slot_levels(len, 0.0);
        let noise = prior.sample_window_noise(len, init.ncols(), rng);
        let mut window = Array2::zeros((len, init.ncols()));
        window.slice_mut(s![..schedule.window, ..]).assign(&init);
        for (w, mut row) in window.axis_iter_mut(Axis(0)).enumerate() {
            row.scaled_add(levels[w], &noise.row(w));
        }
        Ok(Self {
            schedule: *schedule,
            last_noise: noise.row(len - 1).to_owned(),
            window,
            levels,
            t_cur: 0.0,
            emitted: Vec::new(),
            iteration: 0,
        })
    }

    pub fn window(&self) -> ArrayView2<'_, f64> {
        self.window.view()
    }

    /// Noise level currently carried by every slot.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn t_cur(&self) -> f64 {
        self.t_cur
    }

    pub fn emitted(&self) -> &[Array1<f64>] {
        &self.emitted
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Verifies that every slot's level equals the schedule level at `t_cur`.
    pub fn check_levels(&self) -> Result<()> {
        let expected = self.schedule.slot_levels(self.levels.len(), self.t_cur);
        for (w, (a, b)) in self.levels.iter().zip(&expected).enumerate() {
            if (a - b).abs() > 1e-9 * b {
                return Err(Error::State(format!(
                    "slot {} carries noise {a} but the schedule prescribes {b} at t = {}",
                    w + 1,
                    self.t_cur
                )));
            }
        }
        Ok(())
    }

    fn drift(&self, x: &Array2<f64>, denoised: &Array2<f64>, levels: &[f64], t: f64) -> Array2<f64> {
        let first = t.floor() as usize;
        let last = first + self.schedule.window;
        let mut d = Array2::zeros(x.dim());
        for (w, mut row) in d.axis_iter_mut(Axis(0)).enumerate() {
            if w < first {
                continue;
            }
            let inv = 1.0 / levels[w];
            if w < last {
                row.assign(&((&x.row(w) - &denoised.row(w)) * inv));
            } else {
                row.assign(&(&x.row(w) * inv));
            }
        }
        d
    }

    fn guard(&self, x: &Array2<f64>) -> Result<()> {
        if let Some(v) = x.iter().find(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::Divergence {
                iteration: self.iteration,
                detail: format!("state value {v} at t = {}", self.t_cur),
            });
        }
        Ok(())
    }

    /// One solver iteration. Returns the number of snapshots emitted.
    pub fn step(
        &mut self,
        denoiser: &dyn Denoiser,
        cfg: &SamplerConfig,
        prior: &NoisePriorConfig,
        rng: &mut SimRng,
        trace: Option<&mut Vec<TraceRow>>,
    ) -> Result<usize> {
        self.check_levels()?;
        let len = self.levels.len();
        let (dt, dt_over) = match cfg.order {
            SolverOrder::Euler => (cfg.dt(), cfg.dt()),
            SolverOrder::Heun => (cfg.dt(), cfg.dt_overshoot()),
        };
        let t_cur = self.t_cur;
        let t_next = snap(t_cur + dt);
        let t_over = snap(t_cur + dt_over);
        let lv_cur = self.levels.clone();
        let lv_over = self.schedule.slot_levels(len, t_over);
        let lv_next = self.schedule.slot_levels(len, t_next);

        let denoised = padded_denoise(denoiser, self.window.view(), t_cur, &self.schedule)?;
        let d = self.drift(&self.window, &denoised, &lv_cur, t_cur);
        let step: Vec<f64> = lv_over.iter().zip(&lv_cur).map(|(b, a)| b - a).collect();

        let mut x_next = self.window.clone();
        for (w, mut row) in x_next.axis_iter_mut(Axis(0)).enumerate() {
            row.scaled_add(step[w], &d.row(w));
        }

        if cfg.order == SolverOrder::Heun {
            self.guard(&x_next)?;
            let denoised2 = padded_denoise(denoiser, x_next.view(), t_over, &self.schedule)?;
            let mut d2 = self.drift(&x_next, &denoised2, &lv_over, t_over);
            // Slots finished at t_over keep their Euler update.
            let finished = (t_over.floor() as usize).min(len);
            d2.slice_mut(s![..finished, ..]).assign(&d.slice(s![..finished, ..]));
            x_next = self.window.clone();
            for (w, mut row) in x_next.axis_iter_mut(Axis(0)).enumerate() {
                let avg = (&d.row(w) + &d2.row(w)) * 0.5;
                row.scaled_add(step[w], &avg);
            }

            if t_over > t_next {
                for (w, mut row) in x_next.axis_iter_mut(Axis(0)).enumerate() {
                    let radicand = lv_next[w] * lv_next[w] - lv_over[w] * lv_over[w];
                    if radicand < -1e-12 * lv_next[w] * lv_next[w] {
                        return Err(Error::config(
                            "s_churn",
                            format!("churn would need imaginary noise at slot {}", w + 1),
                        ));
                    }
                    let scale = radicand.max(0.0).sqrt() * cfg.s_noise;
                    if scale > 0.0 {
                        for v in row.iter_mut() {
                            *v += scale * standard_normal(rng);
                        }
                    }
                }
            }
        }
        self.guard(&x_next)?;

        let n_clean = t_next.floor() as usize;
        if let Some(tr) = trace {
            tr.push(TraceRow {
                iteration: self.iteration,
                t_cur,
                levels: lv_cur,
                n_clean,
            });
        }
        self.window = x_next;
        self.levels = lv_next;
        self.t_cur = t_next;
        self.shift_window(n_clean, denoised.view(), prior, rng)?;
        self.iteration += 1;
        Ok(n_clean)
    }

    /// Emits the first `n_clean` rows of `denoised`, drops the first `n_clean`
    /// noisy slots, appends as many `sigma_max` slots and rewinds the time.
    pub fn shift_window(
        &mut self,
        n_clean: usize,
        denoised: ArrayView2<f64>,
        prior: &NoisePriorConfig,
        rng: &mut SimRng,
    ) -> Result<()> {
        if n_clean == 0 {
            return Ok(());
        }
        let len = self.window.nrows();
        if n_clean > len || n_clean > denoised.nrows() {
            return Err(Error::Shape(format!(
                "cannot finish {n_clean} snapshots of a {len}-slot window"
            )));
        }
        for w in 0..n_clean {
            self.emitted.push(denoised.row(w).to_owned());
        }
        let dim = self.window.ncols();
        let mut next = Array2::zeros((len, dim));
        next.slice_mut(s![..len - n_clean, ..])
            .assign(&self.window.slice(s![n_clean.., ..]));
        let sigma_max = self.schedule.sigma_max;
        for w in len - n_clean..len {
            let eps = prior.sample_appended_noise(self.last_noise.view(), rng);
            next.row_mut(w).assign(&(&eps * sigma_max));
            self.last_noise = eps;
        }
        self.window = next;
        self.levels.drain(..n_clean);
        self.levels.extend(std::iter::repeat_n(sigma_max, n_clean));
        self.t_cur = snap(self.t_cur - n_clean as f64);
        Ok(())
    }
}

/// Runs the rolling sampler until `cfg.horizon` snapshots are emitted and
/// returns them as a `horizon x D` array.
pub fn rollout(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    init: ArrayView2<f64>,
    prior: &NoisePriorConfig,
    rng: &mut SimRng,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<Array2<f64>> {
    let mut state = RollingState::initialize(schedule, cfg, init, prior, rng)?;
    while state.emitted.len() < cfg.horizon {
        state.step(denoiser, cfg, prior, rng, trace.as_deref_mut())?;
    }
    let dim = init.ncols();
    let mut out = Array2::zeros((cfg.horizon, dim));
    for (i, row) in state.emitted.iter().take(cfg.horizon).enumerate() {
        out.row_mut(i).assign(row);
    }
    Ok(out)
}

/// First-order rolling sampler.
pub fn euler_rollout(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    init: ArrayView2<f64>,
    prior: &NoisePriorConfig,
    rng: &mut SimRng,
) -> Result<Array2<f64>> {
    let cfg = SamplerConfig {
        order: SolverOrder::Euler,
        ..*cfg
    };
    rollout(denoiser, schedule, &cfg, init, prior, rng, None)
}

/// Second-order rolling sampler with optional churn.
pub fn heun_rollout(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    init: ArrayView2<f64>,
    prior: &NoisePriorConfig,
    rng: &mut SimRng,
) -> Result<Array2<f64>> {
    let cfg = SamplerConfig {
        order: SolverOrder::Heun,
        ..*cfg
    };
    rollout(denoiser, schedule, &cfg, init, prior, rng, None)
}

/// Integrates one window's probability-flow ODE from `t = 0` to `t = 1`
/// without shifting, with `steps` uniform steps. Returns the final state.
///
/// Used to measure the solver's convergence order in isolation.
pub fn integrate_window(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    order: SolverOrder,
    start: ArrayView2<f64>,
    steps: usize,
) -> Result<Array2<f64>> {
    if start.nrows() != schedule.window || steps == 0 {
        return Err(Error::Shape("window/step count mismatch".into()));
    }
    let mut x = start.to_owned();
    for i in 0..steps {
        let (t0, t1) = (i as f64 / steps as f64, (i + 1) as f64 / steps as f64);
        let s0 = schedule.sigma_vec(t0)?;
        let s1 = schedule.sigma_vec(t1)?;
        let d = slot_drift(denoiser, x.view(), &s0)?;
        let mut x1 = x.clone();
        for (w, mut row) in x1.axis_iter_mut(Axis(0)).enumerate() {
            row.scaled_add(s1[w] - s0[w], &d.row(w));
        }
        if order == SolverOrder::Heun {
            let d2 = slot_drift(denoiser, x1.view(), &s1)?;
            x1 = x.clone();
            for (w, mut row) in x1.axis_iter_mut(Axis(0)).enumerate() {
                row.scaled_add(0.5 * (s1[w] - s0[w]), &(&d.row(w) + &d2.row(w)));
            }
        }
        x = x1;
    }
    Ok(x)
}

fn slot_drift(denoiser: &dyn Denoiser, x: ArrayView2<f64>, sigmas: &[f64]) -> Result<Array2<f64>> {
    let den = denoiser.denoise(x, sigmas)?;
    let mut d = &x - &den;
    for (mut row, s) in d.axis_iter_mut(Axis(0)).zip(sigmas) {
        row /= *s;
    }
    Ok(d)
}

/// Sampler settings for the conditional next-step baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSamplerConfig {
    pub n_steps: usize,
    /// Single-slot schedule; its `window` must be 1.
    pub schedule: NoiseSchedule,
}

impl Default for BaselineSamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 10,
            schedule: NoiseSchedule::edm(1),
        }
    }
}

impl BaselineSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::config("n_steps", "must be at least 1"));
        }
        self.schedule.validate()?;
        if self.schedule.window != 1 {
            return Err(Error::config("schedule.window", "baseline schedule must have window 1"));
        }
        Ok(())
    }

    /// Noise levels `sigma_bar_1(i / n_steps)`, `i = 0..=n_steps`.
    pub fn levels(&self) -> Vec<f64> {
        (0..=self.n_steps)
            .map(|i| self.schedule.sigma_at(i as f64 / self.n_steps as f64))
            .collect()
    }
}

/// Draws the next snapshot given the current clean state `y0` by
/// deterministic Heun integration from pure `sigma_max` noise down to
/// `sigma_min`. Every step costs two denoiser evaluations.
pub fn edm_baseline_sample(
    denoiser: &dyn ContextDenoiser,
    y0: ArrayView1<f64>,
    cfg: &BaselineSamplerConfig,
    rng: &mut SimRng,
) -> Result<Array1<f64>> {
    cfg.validate()?;
    let dim = y0.len();
    let bound = Bound::new(denoiser, y0.to_owned())?;
    let levels = cfg.levels();
    let mut x = Array2::from_shape_fn((1, dim), |_| levels[0] * standard_normal(rng));
    for i in 0..cfg.n_steps {
        let (s0, s1) = (levels[i], levels[i + 1]);
        let d = slot_drift(&bound, x.view(), &[s0])?;
        let x1 = &x + &(&d * (s1 - s0));
        let d2 = slot_drift(&bound, x1.view(), &[s1])?;
        x = &x + &((&d + &d2) * (0.5 * (s1 - s0)));
        if let Some(v) = x.iter().find(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::Divergence {
                iteration: i,
                detail: format!("baseline state value {v}"),
            });
        }
    }
    Ok(x.index_axis_move(Axis(0), 0))
}

/// Autoregressive baseline rollout of `horizon` snapshots from `y0`.
pub fn edm_baseline_rollout(
    denoiser: &dyn ContextDenoiser,
    y0: ArrayView1<f64>,
    horizon: usize,
    cfg: &BaselineSamplerConfig,
    rng: &mut SimRng,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((horizon, y0.len()));
    let mut cur = y0.to_owned();
    for k in 0..horizon {
        cur = edm_baseline_sample(denoiser, cur.view(), cfg, rng)?;
        out.row_mut(k).assign(&cur);
    }
    Ok(out)
}
