//! Run configuration: one JSON document holding every setting of a
//! generate / train / forecast / evaluate pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::denoiser::NetConfig;
use crate::dynamics::SystemSpec;
use crate::error::{Error, Result};
use crate::init::InitConfig;
use crate::io::write_atomic;
use crate::noise_prior::NoisePriorConfig;
use crate::sampler::{BaselineSamplerConfig, SamplerConfig};
use crate::schedule::NoiseSchedule;
use crate::training::{ModelKind, TrainingConfig};
use crate::weighting::LossWeighting;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Snapshots to simulate.
    pub n_steps: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    /// Trajectory file written by `generate`, read by later stages.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_steps: 20_000,
            train_frac: 0.7,
            val_frac: 0.1,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    pub sigma_data: f64,
    /// Trained network to forecast with.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Erdm,
            hidden: vec![128, 128],
            sigma_data: 1.0,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Forecast start dates, evenly spaced over the test split.
    pub n_starts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_starts: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub data: DataConfig,
    pub schedule: NoiseSchedule,
    pub weighting: LossWeighting,
    pub noise_prior: NoisePriorConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub sampler: SamplerConfig,
    pub baseline_sampler: BaselineSamplerConfig,
    pub init: InitConfig,
    pub eval: EvalConfig,
    /// Ensemble size `M`.
    pub members: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemSpec::default(),
            data: DataConfig::default(),
            schedule: NoiseSchedule::default(),
            weighting: LossWeighting::default(),
            noise_prior: NoisePriorConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            sampler: SamplerConfig::default(),
            baseline_sampler: BaselineSamplerConfig::default(),
            init: InitConfig::default(),
            eval: EvalConfig::default(),
            members: 50,
            seed: 0,
        }
    }
}

fn scoped(prefix: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { field, reason } if !field.starts_with(prefix) => Error::Config {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    })
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.data.n_steps < 2 {
            return Err(Error::config("data.n_steps", "must be at least 2"));
        }
        if !(self.data.train_frac > 0.0 && self.data.val_frac >= 0.0 && self.data.train_frac + self.data.val_frac < 1.0)
        {
            return Err(Error::config("data.train_frac", "train and validation fractions must leave a test split"));
        }
        scoped("schedule", self.schedule.validate())?;
        scoped("weighting", self.weighting.validate())?;
        scoped("noise_prior", self.noise_prior.validate())?;
        scoped("model", self.net_config().validate())?;
        self.training.validate()?;
        scoped("sampler", self.sampler.validate())?;
        scoped("baseline_sampler", self.baseline_sampler.validate())?;
        if self.eval.n_starts == 0 {
            return Err(Error::config("eval.n_starts", "must be at least 1"));
        }
        if self.members < 2 {
            return Err(Error::config("members", "ensemble scores need at least 2 members"));
        }
        Ok(())
    }

    /// Network shape for `model.kind` on this system.
    pub fn net_config(&self) -> NetConfig {
        let dim = self.system.dim();
        let (window, context_dim) = match self.model.kind {
            ModelKind::Erdm => (self.schedule.window, 0),
            ModelKind::EdmBaseline => (1, dim),
        };
        NetConfig {
            window,
            dim,
            context_dim,
            hidden: self.model.hidden.clone(),
            sigma_data: self.model.sigma_data,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the compact JSON serialization, as lowercase hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Applies `key=value` overrides (dotted keys, JSON or bare-string values)
    /// and revalidates.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            apply_override(&mut doc, o.as_ref())?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::config("<override>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sets `a.b.c=value` inside a JSON document. The key path must already
/// exist, except that the final key may be added to an object (for optional
/// fields serialized as absent).
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config(assignment, "empty override key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(key, format!("`{}` is not a section", parts[..i].join("."))))?;
        if last {
            if !obj.contains_key(*part) {
                return Err(Error::config(key, "unknown key"));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*part).ok_or_else(|| Error::config(key, "unknown key"))?;
    }
    unreachable!()
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    let mut text = cfg.to_json();
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SolverOrder;

    #[test]
    fn defaults_match_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.schedule.window, 6);
        assert_eq!(c.schedule.sigma_min, 0.002);
        assert_eq!(c.schedule.sigma_max, 200.0);
        assert_eq!(c.schedule.rho, -10.0);
        assert_eq!((c.weighting.p_mean, c.weighting.p_std), (0.5, 1.2));
        assert_eq!(c.sampler.steps_per_snapshot, 1.25);
        assert_eq!(c.sampler.order, SolverOrder::Heun);
        assert_eq!(c.sampler.s_churn, 0.0);
        assert_eq!(c.noise_prior.alpha, 1.0);
        assert_eq!(c.training.ema_decay, 0.995);
        assert_eq!(c.members, 50);
    }

    fn valid() -> RunConfig {
        RunConfig {
            members: 50,
            ..Default::default()
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let c = valid();
        save_config(&c, &p).unwrap();
        let back = load_config(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn named_validation_errors() {
        let mut c = valid();
        c.schedule.sigma_min = -1.0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("schedule.sigma_min"), "{msg}");
        let mut c = valid();
        c.training.ema_decay = 1.0;
        assert!(c.validate().unwrap_err().to_string().contains("training.ema_decay"));
        let mut c = valid();
        c.sampler.s_churn = 2.0;
        assert!(c.validate().unwrap_err().to_string().contains("sampler.s_churn"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut doc = serde_json::to_value(valid()).unwrap();
        doc["schedule"]["sigma_mid"] = 1.0.into();
        let msg = RunConfig::from_json(&doc.to_string()).unwrap_err().to_string();
        assert!(msg.contains("sigma_mid"), "{msg}");
        let mut doc = serde_json::to_value(valid()).unwrap();
        doc.as_object_mut().unwrap().remove("members");
        assert!(RunConfig::from_json(&doc.to_string()).unwrap_err().to_string().contains("members"));
    }

    #[test]
    fn overrides() {
        let c = valid()
            .with_overrides(&["schedule.rho=7", "sampler.order=euler", "init.kind=persistence", "seed=9"])
            .unwrap();
        assert_eq!(c.schedule.rho, 7.0);
        assert_eq!(c.sampler.order, SolverOrder::Euler);
        assert_eq!(c.seed, 9);
        assert_ne!(c.hash(), valid().hash());
        assert!(valid().with_overrides(&["schedule.nope=1"]).unwrap_err().to_string().contains("unknown key"));
        assert!(valid().with_overrides(&["schedule.window=0"]).is_err());
        assert!(valid().with_overrides(&["noequals"]).is_err());
        let p = valid().with_overrides(&["init.forecaster=\"runs/base/checkpoint.rdf\""]).unwrap();
        assert_eq!(p.init.forecaster.unwrap().to_str(), Some("runs/base/checkpoint.rdf"));
    }

    #[test]
    fn baseline_network_shape() {
        let mut c = valid();
        c.model.kind = ModelKind::EdmBaseline;
        let n = c.net_config();
        assert_eq!((n.window, n.context_dim), (1, 3));
    }
}
