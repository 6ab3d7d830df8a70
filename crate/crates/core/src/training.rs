//! Training loops for the rolling model and the next-step baseline.
//!
//! Both minimise a weighted denoising loss through the preconditioned
//! network. Since `lambda(sigma) * c_out(sigma)^2 = 1`, the weighted error
//! `lambda ||y - D(x)||^2` equals `||F(c_in x) - (y - c_skip x) / c_out||^2`,
//! which is the form used for gradients. Losses are averaged over batch,
//! slots and channels.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, PrecondNet};
use crate::dynamics::TrainingWindow;
use crate::error::{Error, Result};
use crate::noise_prior::NoisePriorConfig;
use crate::precondition::SlotCoefficients;
use crate::rng::{member_rng, standard_normal, SimRng};
use crate::schedule::NoiseSchedule;
use crate::weighting::LossWeighting;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Erdm,
    EdmBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub steps: usize,
    /// Peak learning rate.
    pub lr: f64,
    /// Linear warmup steps before the cosine decay.
    pub warmup: usize,
    /// Final learning rate as a fraction of `lr`.
    pub min_lr_ratio: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
    pub ema_decay: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Ablation: draw every slot's noise level independently instead of
    /// following the rolling schedule.
    pub random_schedule: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            steps: 4000,
            lr: 1e-3,
            warmup: 200,
            min_lr_ratio: 0.05,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            ema_decay: 0.995,
            seed: 0,
            checkpoint_every: 0,
            random_schedule: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let f = |name: &str, reason: &str| Err(Error::config(format!("training.{name}"), reason));
        if self.batch_size == 0 {
            return f("batch_size", "must be at least 1");
        }
        if self.steps == 0 {
            return f("steps", "must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return f("lr", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return f("min_lr_ratio", "must lie in [0, 1]");
        }
        if !(self.weight_decay >= 0.0) {
            return f("weight_decay", "must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return f("beta1", "betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return f("eps", "must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return f("grad_clip", "must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return f("ema_decay", "must lie in [0, 1)");
        }
        Ok(())
    }

    /// Learning rate for 0-based `step`: linear warmup, then cosine decay
    /// to `min_lr_ratio * lr` at the final step.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1) as f64;
        let p = ((step - self.warmup) as f64 / span).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * p).cos());
        self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cos)
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainingConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * params[i]);
        }
    }
}

/// Exponential moving average of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    pub decay: f64,
    pub params: Vec<f64>,
}

impl Ema {
    pub fn new(decay: f64, params: &[f64]) -> Self {
        Self {
            decay,
            params: params.to_vec(),
        }
    }

    /// `e <- d e + (1 - d) p`, written so that `e == p` is a fixed point.
    pub fn update(&mut self, params: &[f64]) {
        let a = 1.0 - self.decay;
        for (e, p) in self.params.iter_mut().zip(params) {
            *e += a * (p - *e);
        }
    }
}

/// Rescales `grad` in place so its global norm is at most `bound`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], bound: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if bound > 0.0 && norm > bound {
        let s = bound / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// Noisy training examples for one optimizer step.
struct Batch {
    noisy: Vec<Array2<f64>>,
    clean: Vec<Array2<f64>>,
    coeffs: Vec<SlotCoefficients>,
    contexts: Vec<Array1<f64>>,
    /// Per-slot loss multiplier on top of `lambda`.
    slot_weights: Vec<Vec<f64>>,
}

/// Network, optimizer state and EMA for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainingConfig,
    net: PrecondNet,
    opt: AdamW,
    ema: Ema,
    step: usize,
    log: Vec<LogRow>,
    rng: SimRng,
}

impl Trainer {
    pub fn new(net: PrecondNet, cfg: TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let n = net.params().len();
        Ok(Self {
            opt: AdamW::new(n),
            ema: Ema::new(cfg.ema_decay, net.params()),
            rng: member_rng(cfg.seed, 1),
            cfg,
            net,
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    pub fn net(&self) -> &PrecondNet {
        &self.net
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn ema_params(&self) -> &[f64] {
        &self.ema.params
    }

    /// The network with EMA parameters, as used for evaluation.
    pub fn ema_net(&self) -> Result<PrecondNet> {
        PrecondNet::from_params(self.net.config().clone(), self.ema.params.clone())
    }

    pub fn rng_mut(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let c = self.net.config();
        let (w, d) = (c.window, c.dim);
        let b = batch.noisy.len();
        let input = self.net.batch_input(&batch.noisy, &batch.coeffs, &batch.contexts);
        let (out, tape) = self.net.mlp().forward_tape(input.view())?;
        let norm = 1.0 / (b * w * d) as f64;
        let mut upstream = Array2::zeros(out.dim());
        let mut loss = 0.0;
        for k in 0..b {
            let (x, y, co) = (&batch.noisy[k], &batch.clean[k], &batch.coeffs[k]);
            for s in 0..w {
                let fw = batch.slot_weights[k][s];
                for j in 0..d {
                    let target = (y[[s, j]] - co.c_skip[s] * x[[s, j]]) / co.c_out[s];
                    let r = out[[k, s * d + j]] - target;
                    loss += fw * r * r * norm;
                    upstream[[k, s * d + j]] = 2.0 * fw * r * norm;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: format!("loss {loss} at lr {}", self.cfg.lr_at(self.step)),
            });
        }
        let grad = self.net.mlp().backward(&tape, upstream.view())?;
        Ok((loss, grad))
    }

    fn apply(&mut self, batch: Batch) -> Result<f64> {
        let (loss, mut grad) = self.loss_and_grad(&batch)?;
        let grad_norm = clip_grad_norm(&mut grad, self.cfg.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: format!("gradient norm {grad_norm}"),
            });
        }
        let lr = self.cfg.lr_at(self.step);
        self.opt.update(self.net.mlp_mut().params_mut(), &grad, lr, &self.cfg);
        self.ema.update(self.net.params());
        self.log.push(LogRow {
            step: self.step,
            loss,
            lr,
            grad_norm,
        });
        self.step += 1;
        Ok(loss)
    }

    /// One optimizer step on clean `W x D` windows: draw `t ~ U[0, 1)` per
    /// window, corrupt slot `w` with `sigma_bar_w(t)` times prior noise and
    /// weight slot errors by `lambda * f`.
    pub fn train_step_erdm(
        &mut self,
        windows: &[ArrayView2<f64>],
        schedule: &NoiseSchedule,
        weighting: &LossWeighting,
        prior: &NoisePriorConfig,
    ) -> Result<f64> {
        let c = self.net.config().clone();
        if c.context_dim != 0 || schedule.window != c.window {
            return Err(Error::Shape("rolling model needs an unconditional network of the schedule's window".into()));
        }
        let mut batch = Batch {
            noisy: Vec::with_capacity(windows.len()),
            clean: Vec::with_capacity(windows.len()),
            coeffs: Vec::with_capacity(windows.len()),
            contexts: Vec::new(),
            slot_weights: Vec::with_capacity(windows.len()),
        };
        for y in windows {
            if y.dim() != (c.window, c.dim) {
                return Err(Error::Shape(format!("training window {:?}", y.dim())));
            }
            let sigmas = if self.cfg.random_schedule {
                let mut s: Vec<f64> = (0..c.window).map(|_| schedule.sigma_at(self.rng.random())).collect();
                s.sort_by(|a, b| a.total_cmp(b));
                s
            } else {
                schedule.sigma_vec(self.rng.random::<f64>())?
            };
            let eps = prior.sample_window_noise(c.window, c.dim, &mut self.rng);
            let mut x = y.to_owned();
            for (mut row, (e, s)) in x.axis_iter_mut(Axis(0)).zip(eps.axis_iter(Axis(0)).zip(&sigmas)) {
                row.scaled_add(*s, &e);
            }
            batch.slot_weights.push(
                sigmas
                    .iter()
                    .map(|&s| Ok(weighting.snapshot_weight(s)? / weighting.lambda(s)?))
                    .collect::<Result<_>>()?,
            );
            batch.coeffs.push(self.net.preconditioner().coefficients(&sigmas)?);
            batch.noisy.push(x);
            batch.clean.push(y.to_owned());
        }
        self.apply(batch)
    }

    /// One optimizer step of the conditional next-step model on `(y0, y1)`
    /// pairs with `ln sigma ~ N(P_mean, P_std^2)` and plain `lambda` weighting.
    pub fn train_step_edm_baseline(&mut self, pairs: &[TrainingWindow], weighting: &LossWeighting) -> Result<f64> {
        let c = self.net.config().clone();
        if c.window != 1 || c.context_dim != c.dim {
            return Err(Error::Shape("baseline needs a single-slot network conditioned on one snapshot".into()));
        }
        let mut batch = Batch {
            noisy: Vec::with_capacity(pairs.len()),
            clean: Vec::with_capacity(pairs.len()),
            coeffs: Vec::with_capacity(pairs.len()),
            contexts: Vec::with_capacity(pairs.len()),
            slot_weights: vec![vec![1.0]; pairs.len()],
        };
        for p in pairs {
            if p.window.dim() != (1, c.dim) || p.y0.len() != c.dim {
                return Err(Error::Shape(format!("baseline pair {:?}", p.window.dim())));
            }
            let sigma = weighting.sample_sigma(&mut self.rng);
            let x = p.window.mapv(|v| v + sigma * standard_normal(&mut self.rng));
            batch.coeffs.push(self.net.preconditioner().coefficients(&[sigma])?);
            batch.noisy.push(x);
            batch.clean.push(p.window.clone());
            batch.contexts.push(p.y0.clone());
        }
        self.apply(batch)
    }
}

/// Progress hook: called after every step with the trainer; returning an
/// error aborts training.
pub type StepHook<'a> = dyn FnMut(&Trainer) -> Result<()> + 'a;

fn draw_indices(rng: &mut SimRng, n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..n)).collect()
}

/// Trains the rolling model on random contiguous windows of `windows`.
pub fn train_erdm(
    trainer: &mut Trainer,
    windows: &[TrainingWindow],
    schedule: &NoiseSchedule,
    weighting: &LossWeighting,
    prior: &NoisePriorConfig,
    mut hook: Option<&mut StepHook<'_>>,
) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Shape("no training windows".into()));
    }
    schedule.validate()?;
    weighting.validate()?;
    prior.validate()?;
    while trainer.step < trainer.cfg.steps {
        let idx = draw_indices(&mut trainer.rng, windows.len(), trainer.cfg.batch_size);
        let views: Vec<ArrayView2<f64>> = idx.iter().map(|&i| windows[i].window.view()).collect();
        trainer.train_step_erdm(&views, schedule, weighting, prior)?;
        if let Some(h) = hook.as_deref_mut() {
            h(trainer)?;
        }
    }
    Ok(())
}

/// Trains the next-step baseline on random `(y0, y1)` pairs.
pub fn train_edm_baseline(
    trainer: &mut Trainer,
    pairs: &[TrainingWindow],
    weighting: &LossWeighting,
    mut hook: Option<&mut StepHook<'_>>,
) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Shape("no training pairs".into()));
    }
    weighting.validate()?;
    while trainer.step < trainer.cfg.steps {
        let idx = draw_indices(&mut trainer.rng, pairs.len(), trainer.cfg.batch_size);
        let batch: Vec<TrainingWindow> = idx.iter().map(|&i| pairs[i].clone()).collect();
        trainer.train_step_edm_baseline(&batch, weighting)?;
        if let Some(h) = hook.as_deref_mut() {
            h(trainer)?;
        }
    }
    Ok(())
}

/// `(1 / (W D)) Σ_w weight(sigma_w) ||y_w - D(x)_w||^2` for any denoiser,
/// where the weight is `lambda` (or `lambda * f` when `with_f`).
pub fn weighted_window_loss(
    denoiser: &dyn Denoiser,
    clean: ArrayView2<f64>,
    noisy: ArrayView2<f64>,
    sigmas: &[f64],
    weighting: &LossWeighting,
    with_f: bool,
) -> Result<f64> {
    let est = denoiser.denoise(noisy, sigmas)?;
    let (w, d) = clean.dim();
    let mut total = 0.0;
    for s in 0..w {
        let mut wt = weighting.lambda(sigmas[s])?;
        if with_f {
            wt *= weighting.lognormal_pdf(sigmas[s])?;
        }
        let err: f64 = (0..d).map(|j| (clean[[s, j]] - est[[s, j]]).powi(2)).sum();
        total += wt * err;
    }
    Ok(total / (w * d) as f64)
}
