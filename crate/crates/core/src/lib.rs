//! Rolling diffusion for probabilistic forecasting of chaotic systems.
//!
//! A window of `W` future snapshots is denoised jointly, each slot at its own
//! noise level from a progressive schedule. Every time the leading slot
//! becomes clean it is emitted, the window shifts by one and a fresh
//! pure-noise slot enters at the back.
//!
//! The crate contains the schedule, EDM preconditioning and loss weighting,
//! a small trainable denoiser with hand-written backpropagation, the rolling
//! Euler and Heun samplers, a conditional next-step baseline, synthetic
//! dynamical systems, ensemble verification metrics and the file formats
//! used by the command-line tool.

pub mod checkpoint;
pub mod config;
pub mod denoiser;
pub mod dynamics;
pub mod error;
pub mod forecast;
pub mod init;
pub mod io;
pub mod metrics;
pub mod noise_prior;
pub mod pipeline;
pub mod precondition;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod training;
pub mod weighting;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{load_config, save_config, RunConfig};
pub use denoiser::{ContextDenoiser, Denoiser, GaussianOracle, NetConfig, PrecondNet};
pub use dynamics::{simulate, Dataset, Standardizer, SystemSpec};
pub use error::{Error, Result};
pub use forecast::RollingForecaster;
pub use init::{EdmBaseline, InitKind, Initializer, NextStepForecaster};
pub use metrics::{crps, EnsembleForecast};
pub use noise_prior::NoisePriorConfig;
pub use precondition::Preconditioner;
pub use sampler::{SamplerConfig, SolverOrder};
pub use schedule::NoiseSchedule;
pub use training::{ModelKind, Trainer, TrainingConfig};
pub use weighting::LossWeighting;
