//! Network checkpoints in the array file format.
//!
//! The payload is the flat parameter vector as `f32`; the header's `extra`
//! field records the model kind, layer widths, network shape, noise schedule,
//! loss weighting and training step.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{NetConfig, PrecondNet};
use crate::error::{Error, Result};
use crate::io::{read_array, to_f32, write_array, ArrayHeader};
use crate::schedule::NoiseSchedule;
use crate::training::ModelKind;
use crate::weighting::LossWeighting;

pub const CHECKPOINT_KIND: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelKind,
    pub layers: Vec<usize>,
    pub net: NetConfig,
    pub schedule: NoiseSchedule,
    pub weighting: LossWeighting,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        model: ModelKind,
        net: &PrecondNet,
        params: &[f64],
        schedule: NoiseSchedule,
        weighting: LossWeighting,
        step: usize,
    ) -> Self {
        Self {
            meta: CheckpointMeta {
                model,
                layers: net.config().widths(),
                net: net.config().clone(),
                schedule,
                weighting,
                step,
            },
            params: params.to_vec(),
        }
    }

    pub fn network(&self) -> Result<PrecondNet> {
        PrecondNet::from_params(self.meta.net.clone(), self.params.clone())
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint, config_hash: Option<String>) -> Result<()> {
    let mut h = ArrayHeader::new(CHECKPOINT_KIND, vec![ck.params.len()]);
    h.config_hash = config_hash;
    h.extra = serde_json::to_value(&ck.meta).map_err(|e| Error::format(path, e.to_string()))?;
    write_array(path, &h, &to_f32(ck.params.iter().copied()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (h, data) = read_array(path)?;
    if h.kind != CHECKPOINT_KIND {
        return Err(Error::format(path, format!("expected a checkpoint, found {:?}", h.kind)));
    }
    let meta: CheckpointMeta =
        serde_json::from_value(h.extra).map_err(|e| Error::format(path, format!("checkpoint metadata: {e}")))?;
    if meta.layers != meta.net.widths() || data.len() != meta.net.num_params() {
        return Err(Error::format(path, "parameter count does not match the recorded layers"));
    }
    Ok(Checkpoint {
        meta,
        params: data.into_iter().map(f64::from).collect(),
    })
}
