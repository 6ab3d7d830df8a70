//! `rolldiff`: generate data, train, forecast and evaluate rolling diffusion
//! models from one JSON run configuration.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use rolldiff::{load_config, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "rolldiff", version, about = "Rolling diffusion forecasting for chaotic systems")]
pub struct Cli {
    /// Run configuration (JSON). Defaults to the built-in reference setup.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override a config value by dotted key, e.g. `--set schedule.rho=7`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory. Receives the resolved `config.json` and all results.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Run seed (data generation and forecasting).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Ensemble size.
    #[arg(long, global = true)]
    members: Option<usize>,

    /// Forecast horizon in snapshots.
    #[arg(long, global = true)]
    horizon: Option<usize>,

    /// Progress messages on stderr (repeat for more).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the configured system and write `trajectory.rdf`.
    Generate,
    /// Train the configured model (`model.kind`) and write checkpoints and `loss.csv`.
    Train {
        /// Trajectory from `generate` (default: `data.path`).
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Ensemble forecasts from evenly spaced test-split start dates.
    Forecast {
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Trained network (default: `model.checkpoint`).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Also write the sampler trace of the first member as `trace.csv`.
        #[arg(long)]
        trace: bool,
    },
    /// Per-lead scores of forecast files against the true trajectory.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Forecast file; repeat to compare several. Named by file stem, or by
        /// parent directory for files called `forecast.rdf`.
        #[arg(long = "forecast", value_name = "PATH", required = true)]
        forecasts: Vec<PathBuf>,
        /// Name of the forecast CRPSS is computed against (default: the first).
        #[arg(long, value_name = "NAME")]
        baseline: Option<String>,
    },
    /// Noise levels of every window slot over one sampler iteration.
    ScheduleDump {
        /// Evaluation points per unit of `t`.
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
}

impl Cli {
    /// Config file, then `--set` overrides, then the dedicated flags.
    fn resolve_config(&self) -> anyhow::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        let mut sets = self.overrides.clone();
        if let Some(s) = self.seed {
            sets.push(format!("seed={s}"));
        }
        if let Some(m) = self.members {
            sets.push(format!("members={m}"));
        }
        if let Some(h) = self.horizon {
            sets.push(format!("sampler.horizon={h}"));
        }
        let path_flag = |key: &str, p: &Option<PathBuf>| -> anyhow::Result<Option<String>> {
            Ok(match p {
                Some(p) => Some(format!("{key}={}", serde_json::to_string(p)?)),
                None => None,
            })
        };
        match &self.command {
            Command::Train { data } | Command::Evaluate { data, .. } => sets.extend(path_flag("data.path", data)?),
            Command::Forecast { data, checkpoint, .. } => {
                sets.extend(path_flag("data.path", data)?);
                sets.extend(path_flag("model.checkpoint", checkpoint)?);
            }
            Command::Generate | Command::ScheduleDump { .. } => {}
        }
        Ok(base.with_overrides(&sets)?)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (line, code) = output::error_line(&e);
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
