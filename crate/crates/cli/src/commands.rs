//! Subcommand implementations.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context};
use ndarray::s;
use rolldiff::init::InitKind;
use rolldiff::metrics::{crpss, score_by_lead, AreaWeights};
use rolldiff::pipeline::{self, ForecastMeta, Forecaster};
use rolldiff::training::StepHook;
use rolldiff::{
    load_checkpoint, save_checkpoint, save_config, Checkpoint, Dataset, EdmBaseline, Initializer, ModelKind,
    NoiseSchedule, PrecondNet, RollingForecaster, RunConfig, SystemSpec, Trainer,
};
use serde::Serialize;

use crate::output::OutputDir;
use crate::{Cli, Command};

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = cli.resolve_config()?;
    let dir = cli
        .out
        .as_deref()
        .ok_or_else(|| anyhow!("--out is required"))?;
    let mut out = OutputDir::create(dir)?;
    match &cli.command {
        Command::Generate => generate(&mut cfg, &mut out, cli.verbose)?,
        Command::Train { .. } => train(&mut cfg, &mut out, cli.verbose)?,
        Command::Forecast { trace, .. } => forecast(&cfg, &mut out, *trace, cli.verbose)?,
        Command::Evaluate { forecasts, baseline, .. } => evaluate(&cfg, &mut out, forecasts, baseline.as_deref())?,
        Command::ScheduleDump { points } => schedule_dump(&cfg, &mut out, *points)?,
    }
    save_config(&cfg, &out.file("config.json"))?;
    out.commit();
    Ok(())
}

fn generate(cfg: &mut RunConfig, out: &mut OutputDir, verbose: u8) -> anyhow::Result<()> {
    let data = pipeline::generate(cfg)?;
    let path = out.file("trajectory.rdf");
    cfg.data.path = Some(path.clone());
    pipeline::save_dataset(&path, &data, &cfg.system, Some(cfg.hash()))?;
    if verbose > 0 {
        eprintln!(
            "generated {} snapshots (train {:?}, val {:?}, test {:?})",
            data.trajectory.nrows(),
            data.train,
            data.val,
            data.test
        );
    }
    Ok(())
}

fn load_data(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let path = cfg
        .data
        .path
        .as_deref()
        .ok_or_else(|| rolldiff::Error::config("data.path", "no trajectory: pass --data or set data.path"))?;
    let (data, system) = pipeline::load_dataset(path)?;
    check_system(&system, &cfg.system)?;
    Ok(data)
}

fn check_system(found: &SystemSpec, expected: &SystemSpec) -> anyhow::Result<()> {
    if found != expected {
        return Err(rolldiff::Error::config(
            "system",
            format!("trajectory was generated for {found:?}, but the config describes {expected:?}"),
        )
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
    lr: f64,
    grad_norm: f64,
}

fn train(cfg: &mut RunConfig, out: &mut OutputDir, verbose: u8) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let every = cfg.training.checkpoint_every;
    let hash = cfg.hash();
    let snapshot_cfg = cfg.clone();
    let mut hook = |t: &Trainer| -> rolldiff::Result<()> {
        if verbose > 0 && (t.step() % 100 == 0 || t.step() == t.config().steps) {
            let last = t.log().last().map_or(f64::NAN, |r| r.loss);
            eprintln!("step {} loss {last:.5}", t.step());
        }
        if every > 0 && t.step() % every == 0 && t.step() < t.config().steps {
            let ck = pipeline::checkpoint(&snapshot_cfg, t);
            save_checkpoint(&out.file(&format!("checkpoint_{:06}.rdf", t.step())), &ck, Some(hash.clone()))?;
        }
        Ok(())
    };
    let trainer = pipeline::train(cfg, &data, Some(&mut hook as &mut StepHook<'_>))?;

    let mut w = csv::Writer::from_path(out.file("loss.csv"))?;
    for r in trainer.log() {
        w.serialize(LossRow {
            step: r.step,
            loss: r.loss,
            lr: r.lr,
            grad_norm: r.grad_norm,
        })?;
    }
    w.flush()?;

    let path = out.file("checkpoint.rdf");
    save_checkpoint(&path, &pipeline::checkpoint(cfg, &trainer), Some(hash))?;
    cfg.model.checkpoint = Some(path);
    Ok(())
}

/// Loads a checkpoint and checks that it is the network `cfg` describes.
fn load_network(path: &Path, kind: ModelKind) -> anyhow::Result<(Checkpoint, PrecondNet)> {
    let ck = load_checkpoint(path)?;
    ensure!(
        ck.meta.model == kind,
        "{} holds a {:?} network, expected {kind:?}",
        path.display(),
        ck.meta.model
    );
    let net = ck.network()?;
    Ok((ck, net))
}

fn baseline_initializer(cfg: &RunConfig) -> anyhow::Result<Option<EdmBaseline>> {
    if cfg.init.kind != InitKind::ExternalForecaster {
        return Ok(None);
    }
    let path = cfg.init.forecaster.as_deref().ok_or_else(|| rolldiff::Error::Config {
        field: "init.forecaster".into(),
        reason: "external_forecaster initialization needs a baseline checkpoint".into(),
    })?;
    let (_, net) = load_network(path, ModelKind::EdmBaseline)?;
    Ok(Some(EdmBaseline {
        net,
        sampler: cfg.baseline_sampler,
    }))
}

fn forecast(cfg: &RunConfig, out: &mut OutputDir, trace: bool, verbose: u8) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let ck_path = cfg
        .model
        .checkpoint
        .as_deref()
        .ok_or_else(|| rolldiff::Error::config("model.checkpoint", "no network: pass --checkpoint or set model.checkpoint"))?;
    let (ck, net) = load_network(ck_path, cfg.model.kind)?;
    ensure!(
        ck.meta.net == cfg.net_config(),
        "checkpoint network {:?} differs from the configured {:?}",
        ck.meta.net,
        cfg.net_config()
    );
    if cfg.model.kind == ModelKind::Erdm {
        ensure!(
            ck.meta.schedule == cfg.schedule,
            "checkpoint was trained with schedule {:?}, config has {:?}",
            ck.meta.schedule,
            cfg.schedule
        );
    }

    let horizon = cfg.sampler.horizon;
    let test = data.test.clone();
    let starts: Vec<usize> = pipeline::eval_starts(test.len(), horizon, cfg.eval.n_starts)?
        .into_iter()
        .map(|s| s + test.start)
        .collect();
    let series = data.standardized(0..data.trajectory.nrows())?;

    let baseline_model;
    let as_next_step;
    let model = match cfg.model.kind {
        ModelKind::Erdm => {
            baseline_model = baseline_initializer(cfg)?;
            let init = match cfg.init.kind {
                InitKind::ExternalForecaster => {
                    Initializer::External(baseline_model.as_ref().expect("loaded for external init"))
                }
                InitKind::Persistence => Initializer::Persistence,
                InitKind::Truth => Initializer::Truth,
            };
            Forecaster::Rolling(RollingForecaster {
                denoiser: &net,
                schedule: cfg.schedule,
                sampler: cfg.sampler,
                prior: cfg.noise_prior,
                init,
            })
        }
        ModelKind::EdmBaseline => {
            ensure!(!trace, "--trace applies to the rolling sampler only");
            as_next_step = EdmBaseline {
                net: net.clone(),
                sampler: cfg.baseline_sampler,
            };
            Forecaster::NextStep(&as_next_step)
        }
    };

    if verbose > 0 {
        eprintln!("forecasting {} starts x {} members x {horizon} leads", starts.len(), cfg.members);
    }
    let (forecasts, _) = pipeline::forecast_starts(&model, series.view(), &starts, horizon, cfg.members, cfg.seed)?;
    let meta = ForecastMeta {
        model: cfg.model.kind,
        starts: starts.clone(),
        seed: cfg.seed,
    };
    pipeline::save_forecasts(
        &out.file("forecast.rdf"),
        &forecasts,
        &meta,
        &data.stats,
        cfg.system.channel_names(),
        Some(cfg.hash()),
    )?;

    if trace {
        let Forecaster::Rolling(r) = &model else { unreachable!() };
        let rows = pipeline::trace_first_member(r, series.view(), starts[0], horizon, cfg.seed)?;
        let mut w = csv::Writer::from_path(out.file("trace.csv"))?;
        let slots = rows.first().map_or(0, |r| r.levels.len());
        let mut header = vec!["iteration".to_string(), "t_cur".into(), "n_clean".into()];
        header.extend((1..=slots).map(|i| format!("sigma_{i}")));
        w.write_record(&header)?;
        for r in &rows {
            let mut rec = vec![r.iteration.to_string(), r.t_cur.to_string(), r.n_clean.to_string()];
            rec.extend(r.levels.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    model: &'a str,
    lead: usize,
    crps: f64,
    rmse: f64,
    spread: f64,
    ssr: Option<f64>,
    crpss: f64,
}

fn evaluate(cfg: &RunConfig, out: &mut OutputDir, files: &[PathBuf], baseline: Option<&str>) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let series = data.standardized(0..data.trajectory.nrows())?;
    let weights = AreaWeights::uniform(data.dim());

    let mut names = Vec::new();
    let mut scores = Vec::new();
    let mut reference_starts: Option<Vec<usize>> = None;
    let mut seen = HashSet::new();
    for path in files {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("cannot name forecast {}", path.display()))?
            .to_string();
        let name = match path.parent().and_then(|p| p.file_name()).and_then(|p| p.to_str()) {
            Some(parent) if name == "forecast" => parent.to_string(),
            _ => name,
        };
        ensure!(seen.insert(name.clone()), "two forecasts are named {name:?}");
        let (forecasts, meta, stats) =
            pipeline::load_forecasts(path).with_context(|| format!("reading {}", path.display()))?;
        ensure!(stats == data.stats, "{} was standardized with different statistics", path.display());
        match &reference_starts {
            None => reference_starts = Some(meta.starts.clone()),
            Some(s) => ensure!(*s == meta.starts, "{} uses different start dates", path.display()),
        }
        let horizon = forecasts[0].horizon();
        let truths = meta
            .starts
            .iter()
            .map(|&st| {
                ensure!(st + horizon < series.nrows(), "start {st} runs past the trajectory");
                Ok(series.slice(s![st + 1..st + 1 + horizon, ..]).to_owned())
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        scores.push(score_by_lead(&forecasts, &truths, &weights)?);
        names.push(name);
    }

    let base_idx = match baseline {
        Some(b) => names
            .iter()
            .position(|n| n == b)
            .ok_or_else(|| anyhow!("no forecast named {b:?} among {names:?}"))?,
        None => 0,
    };
    let mut w = csv::Writer::from_path(out.file("scores.csv"))?;
    for (name, sc) in names.iter().zip(&scores) {
        for (k, s) in sc.iter().enumerate() {
            let reference = scores[base_idx]
                .get(k)
                .ok_or_else(|| anyhow!("{name} is longer than the reference forecast"))?;
            w.serialize(ScoreRow {
                model: name,
                lead: s.lead,
                crps: s.crps,
                rmse: s.rmse,
                spread: s.spread,
                ssr: s.ssr,
                crpss: crpss(s.crps, reference.crps)?,
            })?;
        }
        let mean = sc.iter().map(|s| s.crps).sum::<f64>() / sc.len() as f64;
        println!("{name}: mean CRPS {mean:.5} over {} leads", sc.len());
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ScheduleRow {
    rho: f64,
    w: usize,
    t: f64,
    sigma: f64,
}

/// Both curvature regimes (the configured one and its EDM / rolling
/// counterpart) at the configured `sigma_min`, `sigma_max` and `W`.
fn schedule_dump(cfg: &RunConfig, out: &mut OutputDir, points: usize) -> anyhow::Result<()> {
    if points < 2 {
        bail!("--points must be at least 2");
    }
    let mut rhos = vec![cfg.schedule.rho];
    for r in [7.0, -10.0] {
        if !rhos.contains(&r) {
            rhos.push(r);
        }
    }
    let mut w = csv::Writer::from_path(out.file("schedule.csv"))?;
    for rho in rhos {
        let sched = NoiseSchedule { rho, ..cfg.schedule };
        sched.validate()?;
        for slot in 1..=sched.window {
            for i in 0..points {
                let t = i as f64 / (points - 1) as f64;
                w.serialize(ScheduleRow {
                    rho,
                    w: slot,
                    t,
                    sigma: sched.sigma_bar(slot, t)?,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
