//! Self-describing binary array files.
//!
//! Layout: the 8 bytes `ROLLDIFF`, a little-endian `u64` header length, a
//! UTF-8 JSON header, then the payload as little-endian `f32` in row-major
//! order. Trajectories, forecasts and network checkpoints all use it.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::dynamics::Standardizer;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ROLLDIFF";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32le";
/// Refuse headers beyond this size rather than allocating for garbage input.
const MAX_HEADER: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayHeader {
    pub magic: String,
    pub version: u32,
    /// What the payload is, e.g. `trajectory`, `forecast`, `checkpoint`.
    pub kind: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    #[serde(default)]
    pub channels: Vec<String>,
    #[serde(default)]
    pub stats: Option<Standardizer>,
    #[serde(default)]
    pub config_hash: Option<String>,
    /// Free-form metadata specific to `kind`.
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl ArrayHeader {
    pub fn new(kind: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            magic: String::from_utf8_lossy(MAGIC).into_owned(),
            version: FORMAT_VERSION,
            kind: kind.into(),
            shape,
            dtype: DTYPE.into(),
            channels: Vec::new(),
            stats: None,
            config_hash: None,
            extra: serde_json::Value::Null,
        }
    }

    pub fn numel(&self) -> Option<usize> {
        self.shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }
}

/// Serializes header and payload into one buffer.
pub fn encode(header: &ArrayHeader, data: &[f32]) -> Result<Vec<u8>> {
    if header.numel() != Some(data.len()) {
        return Err(Error::Shape(format!(
            "header shape {:?} does not match {} values",
            header.shape,
            data.len()
        )));
    }
    let json = serde_json::to_vec(header).map_err(|e| Error::Shape(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a complete file image. `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(ArrayHeader, Vec<f32>)> {
    let bad = |reason: String| Error::format(path, reason);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing ROLLDIFF magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if hlen > MAX_HEADER || hlen > (bytes.len() - 16) as u64 {
        return Err(bad(format!("header length {hlen} exceeds file size")));
    }
    let hend = 16 + hlen as usize;
    let header: ArrayHeader =
        serde_json::from_slice(&bytes[16..hend]).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.magic.as_bytes() != MAGIC {
        return Err(bad(format!("header magic {:?}", header.magic)));
    }
    if header.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    if header.dtype != DTYPE {
        return Err(bad(format!("unsupported dtype {:?}", header.dtype)));
    }
    let n = header
        .numel()
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("shape overflows".into()))?;
    let payload = &bytes[hend..];
    if payload.len() != n {
        return Err(bad(format!(
            "payload has {} bytes, shape {:?} needs {n}",
            payload.len(),
            header.shape
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, data))
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_array(path: &Path, header: &ArrayHeader, data: &[f32]) -> Result<()> {
    write_atomic(path, &encode(header, data)?)
}

pub fn read_array(path: &Path) -> Result<(ArrayHeader, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Narrows an `f64` array to the on-disk `f32` payload.
pub fn to_f32(values: impl IntoIterator<Item = f64>) -> Vec<f32> {
    values.into_iter().map(|v| v as f32).collect()
}

/// Reads any-rank payload as `f64`.
pub fn read_f64(path: &Path) -> Result<(ArrayHeader, ArrayD<f64>)> {
    let (header, data) = read_array(path)?;
    let arr = ArrayD::from_shape_vec(IxDyn(&header.shape), data.into_iter().map(f64::from).collect())
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((header, arr))
}

pub fn read_matrix(path: &Path) -> Result<(ArrayHeader, Array2<f64>)> {
    let (h, a) = read_f64(path)?;
    let a = a
        .into_dimensionality()
        .map_err(|_| Error::format(path, format!("expected a 2-D array, found shape {:?}", h.shape)))?;
    Ok((h, a))
}

pub fn read_cube(path: &Path) -> Result<(ArrayHeader, Array3<f64>)> {
    let (h, a) = read_f64(path)?;
    let a = a
        .into_dimensionality()
        .map_err(|_| Error::format(path, format!("expected a 3-D array, found shape {:?}", h.shape)))?;
    Ok((h, a))
}
