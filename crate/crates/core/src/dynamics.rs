//! Synthetic systems: Lorenz-63, Lorenz-96 and an Ornstein-Uhlenbeck process,
//! plus dataset splitting, standardization and windowing.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{member_rng, standard_normal};

/// Trajectories whose state exceeds this magnitude are rejected.
pub const GENERATION_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum System {
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    Lorenz96 { forcing: f64, dim: usize },
    /// `dx = -theta x dt + sqrt(2 theta variance) dW`, stationary law `N(0, variance)`.
    Ou { theta: f64, variance: f64, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub system: System,
    /// Integration step.
    pub dt: f64,
    /// Integration steps per observed snapshot.
    pub stride: usize,
    /// Integration steps discarded before the first snapshot.
    pub burn_in: usize,
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self::lorenz63()
    }
}

impl SystemSpec {
    /// Canonical Lorenz-63, observed every 0.1 time units.
    pub fn lorenz63() -> Self {
        Self {
            system: System::Lorenz63 {
                sigma: 10.0,
                rho: 28.0,
                beta: 8.0 / 3.0,
            },
            dt: 0.01,
            stride: 10,
            burn_in: 1000,
        }
    }

    pub fn lorenz96(dim: usize, forcing: f64) -> Self {
        Self {
            system: System::Lorenz96 { forcing, dim },
            dt: 0.01,
            stride: 5,
            burn_in: 2000,
        }
    }

    /// OU observed every `delta` time units (a single exact transition per snapshot).
    pub fn ou(theta: f64, variance: f64, dim: usize, delta: f64) -> Self {
        Self {
            system: System::Ou { theta, variance, dim },
            dt: delta,
            stride: 1,
            burn_in: 0,
        }
    }

    pub fn dim(&self) -> usize {
        match self.system {
            System::Lorenz63 { .. } => 3,
            System::Lorenz96 { dim, .. } | System::Ou { dim, .. } => dim,
        }
    }

    /// Channel labels for file headers.
    pub fn channel_names(&self) -> Vec<String> {
        match self.system {
            System::Lorenz63 { .. } => vec!["x".into(), "y".into(), "z".into()],
            _ => (0..self.dim()).map(|j| format!("x{j}")).collect(),
        }
    }

    /// Time between observed snapshots.
    pub fn snapshot_interval(&self) -> f64 {
        self.dt * self.stride as f64
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.system, System::Lorenz96 { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("system.dt", "must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::config("system.stride", "must be at least 1"));
        }
        match self.system {
            System::Lorenz63 { sigma, rho, beta } => {
                if ![sigma, rho, beta].iter().all(|v| v.is_finite()) {
                    return Err(Error::config("system.system", "Lorenz-63 parameters must be finite"));
                }
            }
            System::Lorenz96 { forcing, dim } => {
                if dim < 4 {
                    return Err(Error::config("system.system.dim", "Lorenz-96 needs at least 4 sites"));
                }
                if !forcing.is_finite() {
                    return Err(Error::config("system.system.forcing", "must be finite"));
                }
            }
            System::Ou { theta, variance, dim } => {
                if !(theta > 0.0 && theta.is_finite()) {
                    return Err(Error::config("system.system.theta", "must be positive"));
                }
                if !(variance >= 0.0 && variance.is_finite()) {
                    return Err(Error::config("system.system.variance", "must be nonnegative"));
                }
                if dim == 0 {
                    return Err(Error::config("system.system.dim", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    fn rhs(&self, x: &[f64], out: &mut [f64]) {
        match self.system {
            System::Lorenz63 { sigma, rho, beta } => {
                out[0] = sigma * (x[1] - x[0]);
                out[1] = x[0] * (rho - x[2]) - x[1];
                out[2] = x[0] * x[1] - beta * x[2];
            }
            System::Lorenz96 { forcing, dim } => {
                for i in 0..dim {
                    let ip1 = (i + 1) % dim;
                    let im1 = (i + dim - 1) % dim;
                    let im2 = (i + dim - 2) % dim;
                    out[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + forcing;
                }
            }
            System::Ou { .. } => unreachable!("OU uses its exact transition"),
        }
    }

    fn rk4(&self, x: &mut [f64], buf: &mut [Vec<f64>; 5]) {
        let h = self.dt;
        let n = x.len();
        let [k1, k2, k3, k4, tmp] = buf;
        self.rhs(x, k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.rhs(tmp, k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.rhs(tmp, k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        self.rhs(tmp, k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Simulates `n_steps` observed snapshots (`n_steps x D`).
///
/// Lorenz systems start near their attractor from a seeded perturbation and
/// are integrated with classical RK4; the OU process starts at the origin
/// and uses its exact Gaussian transition.
pub fn simulate(spec: &SystemSpec, n_steps: usize, seed: u64) -> Result<Array2<f64>> {
    spec.validate()?;
    let dim = spec.dim();
    let mut rng = member_rng(seed, 0);
    let mut out = Array2::zeros((n_steps, dim));
    let mut x: Vec<f64> = match spec.system {
        System::Lorenz63 { .. } => vec![1.0, 1.0, 25.0],
        System::Lorenz96 { forcing, .. } => vec![forcing; dim],
        System::Ou { .. } => vec![0.0; dim],
    };
    if !matches!(spec.system, System::Ou { .. }) {
        for v in &mut x {
            *v += 0.01 * standard_normal(&mut rng);
        }
    }
    let mut buf = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
    let mut advance = |x: &mut Vec<f64>, rng: &mut crate::rng::SimRng| match spec.system {
        System::Ou { theta, variance, .. } => {
            let decay = (-theta * spec.dt).exp();
            let sd = (variance * (1.0 - decay * decay)).sqrt();
            for v in x.iter_mut() {
                *v = *v * decay + sd * standard_normal(rng);
            }
        }
        _ => spec.rk4(x, &mut buf),
    };
    let check = |x: &[f64], step: usize| {
        if x.iter().all(|v| v.is_finite() && v.abs() <= GENERATION_BOUND) {
            Ok(())
        } else {
            Err(Error::Generation { step })
        }
    };
    for step in 0..spec.burn_in {
        advance(&mut x, &mut rng);
        check(&x, step)?;
    }
    for k in 0..n_steps {
        for _ in 0..spec.stride {
            advance(&mut x, &mut rng);
        }
        check(&x, spec.burn_in + (k + 1) * spec.stride)?;
        out.row_mut(k).assign(&ArrayView1::from(&x));
    }
    Ok(out)
}

/// Exact predictive mean and variance of the OU process `lead` snapshots
/// after state `y0`.
pub fn ou_predictive(spec: &SystemSpec, y0: ArrayView1<f64>, lead: usize) -> Result<(Array1<f64>, f64)> {
    let System::Ou { theta, variance, .. } = spec.system else {
        return Err(Error::config("system.system.kind", "predictive law is only available for ou"));
    };
    let decay = (-theta * lead as f64 * spec.snapshot_interval()).exp();
    Ok((y0.mapv(|v| v * decay), variance * (1.0 - decay * decay)))
}

/// Per-channel affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and (population) standard deviation per channel. Constant
    /// channels get a unit scale.
    pub fn fit(data: ArrayView2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Shape("cannot standardize an empty trajectory".into()));
        }
        let mean = data.mean_axis(Axis(0)).unwrap();
        let std = data.std_axis(Axis(0), 0.0);
        Ok(Self {
            mean: mean.to_vec(),
            std: std.iter().map(|&s| if s > 0.0 { s } else { 1.0 }).collect(),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.dim() {
            return Err(Error::Shape(format!("{cols} channels for a {}-channel standardizer", self.dim())));
        }
        Ok(())
    }

    pub fn standardize(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(data.ncols())?;
        let mut out = data.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn destandardize(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(data.ncols())?;
        let mut out = data.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }
}

/// A raw trajectory with its standardization fitted on the training split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub trajectory: Array2<f64>,
    pub stats: Standardizer,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Dataset {
    /// Splits chronologically into train / validation / test.
    pub fn new(trajectory: Array2<f64>, train_frac: f64, val_frac: f64) -> Result<Self> {
        if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
            return Err(Error::config(
                "data.train_frac",
                "fractions must be positive and leave room for a test split",
            ));
        }
        let n = trajectory.nrows();
        let n_train = (n as f64 * train_frac) as usize;
        let n_val = (n as f64 * val_frac) as usize;
        if n_train < 2 || n_train + n_val >= n {
            return Err(Error::Shape(format!("trajectory of {n} snapshots is too short to split")));
        }
        let stats = Standardizer::fit(trajectory.slice(s![..n_train, ..]))?;
        Ok(Self {
            trajectory,
            stats,
            train: 0..n_train,
            val: n_train..n_train + n_val,
            test: n_train + n_val..n,
        })
    }

    /// Wraps a trajectory with known statistics; the whole trajectory is the test split.
    pub fn with_stats(trajectory: Array2<f64>, stats: Standardizer) -> Result<Self> {
        stats.check(trajectory.ncols())?;
        let n = trajectory.nrows();
        Ok(Self {
            trajectory,
            stats,
            train: 0..0,
            val: 0..0,
            test: 0..n,
        })
    }

    pub fn dim(&self) -> usize {
        self.trajectory.ncols()
    }

    pub fn standardized(&self, range: Range<usize>) -> Result<Array2<f64>> {
        self.stats.standardize(self.trajectory.slice(s![range, ..]))
    }
}

/// A clean training window and the snapshot preceding it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub y0: Array1<f64>,
    pub window: Array2<f64>,
}

/// All contiguous length-`window` slices (stride 1), each paired with its
/// preceding snapshot. `window = 1` yields the `(y0, y1)` pairs of the
/// next-step baseline.
pub fn make_windows(data: ArrayView2<f64>, window: usize) -> Result<Vec<TrainingWindow>> {
    if window == 0 {
        return Err(Error::config("window", "must be at least 1"));
    }
    if data.nrows() < window + 1 {
        return Err(Error::Shape(format!(
            "trajectory of {} snapshots is shorter than a window of {window} plus its initial condition",
            data.nrows()
        )));
    }
    Ok((0..data.nrows() - window)
        .map(|i| TrainingWindow {
            y0: data.row(i).to_owned(),
            window: data.slice(s![i + 1..i + 1 + window, ..]).to_owned(),
        })
        .collect())
}
