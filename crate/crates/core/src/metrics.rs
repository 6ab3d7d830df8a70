//! Ensemble verification scores.
//!
//! CRPS is the fair (unbiased) ensemble estimator
//! `(1/M) Σ|x_m - y| - 1/(2M(M-1)) Σ_m Σ_n |x_m - x_n|`.
//! Spread uses the unbiased ensemble variance, so a calibrated ensemble has
//! `SSR = sqrt((M+1)/M) * spread / rmse ≈ 1`.

use std::ops::Range;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::SimRng;

fn check_members(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::Precondition(format!("fair CRPS needs at least 2 members, got {m}")));
    }
    Ok(())
}

/// Fair CRPS by the `O(M^2)` double sum.
pub fn crps_brute(members: &[f64], obs: f64) -> Result<f64> {
    check_members(members.len())?;
    let m = members.len() as f64;
    let skill: f64 = members.iter().map(|x| (x - obs).abs()).sum::<f64>() / m;
    let mut pair = 0.0;
    for a in members {
        for b in members {
            pair += (a - b).abs();
        }
    }
    Ok(skill - pair / (2.0 * m * (m - 1.0)))
}

/// Fair CRPS in `O(M log M)` using `Σ_mΣ_n |x_m - x_n| = 2 Σ_i (2i - M - 1) x_(i)`.
pub fn crps(members: &[f64], obs: f64) -> Result<f64> {
    check_members(members.len())?;
    let mut sorted = members.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let m = sorted.len() as f64;
    let mut skill = 0.0;
    let mut pair = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        skill += (x - obs).abs();
        pair += (2.0 * (i + 1) as f64 - m - 1.0) * x;
    }
    Ok(skill / m - pair / (m * (m - 1.0)))
}

/// Closed-form CRPS of `N(mean, var)` against `obs`; a point mass when `var = 0`.
pub fn crps_gaussian(mean: f64, var: f64, obs: f64) -> f64 {
    if var <= 0.0 {
        return (obs - mean).abs();
    }
    let sd = var.sqrt();
    let z = (obs - mean) / sd;
    let n = Normal::standard();
    sd * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
}

/// Per-grid-row weights normalized to mean 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaWeights(Vec<f64>);

impl AreaWeights {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    /// Cell-area weights `sin(phi_upper) - sin(phi_lower)` for rows with the
    /// given latitude bounds in degrees.
    pub fn latitude(bounds: &[(f64, f64)]) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Shape("no grid rows".into()));
        }
        let raw: Vec<f64> = bounds
            .iter()
            .map(|(lo, hi)| hi.to_radians().sin() - lo.to_radians().sin())
            .collect();
        if raw.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Precondition("each row needs upper bound > lower bound".into()));
        }
        Ok(Self::normalized(raw))
    }

    fn normalized(raw: Vec<f64>) -> Self {
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        Self(raw.into_iter().map(|w| w / mean).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.0.len() != d {
            return Err(Error::Shape(format!("{} weights for {d} grid points", self.0.len())));
        }
        Ok(())
    }

    fn mean_of(&self, values: impl Iterator<Item = f64>) -> f64 {
        let (s, n) = values.zip(&self.0).fold((0.0, 0usize), |(s, n), (v, w)| (s + v * w, n + 1));
        s / n as f64
    }
}

fn check_grid(members: &ArrayView2<f64>, obs: &ArrayView1<f64>, weights: &AreaWeights) -> Result<()> {
    check_members(members.nrows())?;
    if members.ncols() != obs.len() {
        return Err(Error::Shape(format!("members {:?} vs obs {}", members.dim(), obs.len())));
    }
    weights.check(obs.len())
}

/// Weighted mean of the per-point CRPS; `members` is `M x D`.
pub fn crps_grid(members: ArrayView2<f64>, obs: ArrayView1<f64>, weights: &AreaWeights) -> Result<f64> {
    check_grid(&members, &obs, weights)?;
    let per: Result<Vec<f64>> = members
        .axis_iter(Axis(1))
        .zip(obs.iter())
        .map(|(col, &y)| crps(&col.to_vec(), y))
        .collect();
    Ok(weights.mean_of(per?.into_iter()))
}

/// Weighted mean squared error of the ensemble mean.
pub fn mse_ens(members: ArrayView2<f64>, obs: ArrayView1<f64>, weights: &AreaWeights) -> Result<f64> {
    check_grid(&members, &obs, weights)?;
    let mean = members.mean_axis(Axis(0)).unwrap();
    Ok(weights.mean_of(mean.iter().zip(obs.iter()).map(|(m, y)| (m - y).powi(2))))
}

/// Weighted mean of the unbiased ensemble variance.
pub fn spread_sq(members: ArrayView2<f64>, obs: ArrayView1<f64>, weights: &AreaWeights) -> Result<f64> {
    check_grid(&members, &obs, weights)?;
    let var = members.var_axis(Axis(0), 1.0);
    Ok(weights.mean_of(var.iter().copied()))
}

pub fn rmse_ens(members: ArrayView2<f64>, obs: ArrayView1<f64>, weights: &AreaWeights) -> Result<f64> {
    mse_ens(members, obs, weights).map(f64::sqrt)
}

pub fn spread(members: ArrayView2<f64>, obs: ArrayView1<f64>, weights: &AreaWeights) -> Result<f64> {
    spread_sq(members, obs, weights).map(f64::sqrt)
}

/// `sqrt((M+1)/M)` ensemble-size correction.
pub fn ssr_correction(members: usize) -> f64 {
    ((members as f64 + 1.0) / members as f64).sqrt()
}

/// SSR from accumulated spread^2 and MSE; `None` when the error is zero.
pub fn ssr_from_moments(members: usize, spread_sq: f64, mse: f64) -> Option<f64> {
    if mse > 0.0 {
        Some(ssr_correction(members) * (spread_sq / mse).sqrt())
    } else {
        None
    }
}

/// Spread-skill ratio; `None` (undefined) when the ensemble mean is exact.
pub fn ssr(members: ArrayView2<f64>, obs: ArrayView1<f64>, weights: &AreaWeights) -> Result<Option<f64>> {
    let s2 = spread_sq(members, obs, weights)?;
    let mse = mse_ens(members, obs, weights)?;
    Ok(ssr_from_moments(members.nrows(), s2, mse))
}

/// `1 - model / baseline`.
pub fn crpss(model: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::Precondition(format!("baseline CRPS must be positive, got {baseline}")));
    }
    Ok(1.0 - model / baseline)
}

/// Mean of `(1 - SSR)^2` over a series.
pub fn ssr_deviation(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    series.iter().map(|s| (1.0 - s).powi(2)).sum::<f64>() / series.len() as f64
}

/// One-sided power spectrum of a field on a periodic 1D grid.
///
/// With `F_k = Σ_j f_j e^{-2πijk/D}`, bin `k` in `0..=D/2` holds
/// `c_k |F_k|^2 / D^2` where `c_k = 1` for the mean and (even `D`) Nyquist
/// bins and 2 otherwise, so the bins sum to the mean of `f^2`.
pub fn spectral_density(field: ArrayView1<f64>) -> Result<Array1<f64>> {
    let d = field.len();
    if d < 4 {
        return Err(Error::Precondition(format!("spectrum needs at least 4 grid points, got {d}")));
    }
    let mut buf: Vec<Complex<f64>> = field.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(d).process(&mut buf);
    let half = d / 2;
    let norm = (d * d) as f64;
    Ok(Array1::from_shape_fn(half + 1, |k| {
        let c = if k == 0 || (d % 2 == 0 && k == half) { 1.0 } else { 2.0 };
        c * buf[k].norm_sqr() / norm
    }))
}

/// An `M x T x D` ensemble forecast issued from one start date.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleForecast {
    pub members: Array3<f64>,
    /// Lead time (in snapshots) of each step along the second axis.
    pub leads: Vec<usize>,
    /// RNG stream used by each member.
    pub seeds: Vec<u64>,
}

impl EnsembleForecast {
    pub fn new(members: Array3<f64>, seeds: Vec<u64>) -> Result<Self> {
        let (m, t, _) = members.dim();
        check_members(m)?;
        if seeds.len() != m {
            return Err(Error::Shape(format!("{} seeds for {m} members", seeds.len())));
        }
        if !members.iter().all(|v| v.is_finite()) {
            return Err(Error::Precondition("forecast contains non-finite values".into()));
        }
        Ok(Self {
            members,
            leads: (1..=t).collect(),
            seeds,
        })
    }

    pub fn n_members(&self) -> usize {
        self.members.dim().0
    }

    pub fn horizon(&self) -> usize {
        self.members.dim().1
    }

    /// `M x D` ensemble at step `k` (lead `k + 1`).
    pub fn at(&self, k: usize) -> ArrayView2<'_, f64> {
        self.members.index_axis(Axis(1), k)
    }
}

/// Per-lead scores averaged over start dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadScores {
    pub lead: usize,
    pub crps: f64,
    pub rmse: f64,
    pub spread: f64,
    pub ssr: Option<f64>,
}

/// Scores `forecasts[i]` against `truths[i]` (`T x D`) and averages each lead
/// over start dates. RMSE and spread are the square roots of the averaged
/// squared quantities.
pub fn score_by_lead(
    forecasts: &[EnsembleForecast],
    truths: &[Array2<f64>],
    weights: &AreaWeights,
) -> Result<Vec<LeadScores>> {
    if forecasts.is_empty() || forecasts.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} forecasts for {} truth sequences",
            forecasts.len(),
            truths.len()
        )));
    }
    let horizon = forecasts[0].horizon();
    let members = forecasts[0].n_members();
    for (f, y) in forecasts.iter().zip(truths) {
        if f.horizon() != horizon || f.n_members() != members || y.nrows() < horizon {
            return Err(Error::Shape("forecasts must share horizon and ensemble size".into()));
        }
    }
    let n = forecasts.len() as f64;
    (0..horizon)
        .map(|k| {
            let (mut c, mut mse, mut s2) = (0.0, 0.0, 0.0);
            for (f, y) in forecasts.iter().zip(truths) {
                let ens = f.at(k);
                let obs = y.row(k);
                c += crps_grid(ens, obs, weights)?;
                mse += mse_ens(ens, obs, weights)?;
                s2 += spread_sq(ens, obs, weights)?;
            }
            Ok(LeadScores {
                lead: k + 1,
                crps: c / n,
                rmse: (mse / n).sqrt(),
                spread: (s2 / n).sqrt(),
                ssr: ssr_from_moments(members, s2 / n, mse / n),
            })
        })
        .collect()
}

/// Mean CRPS over the leads in `leads` for each start date.
pub fn crps_by_start(
    forecasts: &[EnsembleForecast],
    truths: &[Array2<f64>],
    weights: &AreaWeights,
    leads: Range<usize>,
) -> Result<Vec<f64>> {
    if forecasts.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} forecasts for {} truth sequences",
            forecasts.len(),
            truths.len()
        )));
    }
    if leads.is_empty() {
        return Err(Error::Precondition("empty lead range".into()));
    }
    forecasts
        .iter()
        .zip(truths)
        .map(|(f, y)| {
            if leads.end > f.horizon() || leads.end > y.nrows() {
                return Err(Error::Shape(format!("lead range {leads:?} beyond horizon {}", f.horizon())));
            }
            let mut total = 0.0;
            for k in leads.clone() {
                total += crps_grid(f.at(k), y.row(k), weights)?;
            }
            Ok(total / leads.len() as f64)
        })
        .collect()
}

/// Percentile bootstrap interval at confidence `level` for the mean of the
/// paired differences `a[i] - b[i]`.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, level: f64, rng: &mut SimRng) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Precondition("need resamples > 0 and a level in (0, 1)".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let idx = |q: f64| ((q * resamples as f64).floor() as usize).min(resamples - 1);
    Ok((means[idx(tail)], means[idx(1.0 - tail)]))
}
