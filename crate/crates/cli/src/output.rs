//! Output directories with cleanup on failure, and the error report format.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rolldiff::Error;
use serde_json::json;

/// An output directory whose files are removed again unless the command
/// commits. A directory created by the command is removed entirely.
pub struct OutputDir {
    dir: PathBuf,
    created: bool,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        let created = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created,
            written: Vec::new(),
            committed: false,
        })
    }

    /// Path of output `name`, registered for cleanup.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        if self.created {
            let _ = fs::remove_dir_all(&self.dir);
        } else {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// One-line JSON error report and the process exit status.
///
/// Status 2 marks configuration problems, 1 everything else.
pub fn error_line(err: &anyhow::Error) -> (String, u8) {
    let lib = err.chain().find_map(|e| e.downcast_ref::<Error>());
    let (kind, field) = match lib {
        Some(Error::Config { field, .. }) => ("config", Some(field.clone())),
        Some(Error::Precondition(_)) => ("precondition", None),
        Some(Error::Shape(_)) => ("shape", None),
        Some(Error::State(_)) => ("state", None),
        Some(Error::Divergence { .. }) => ("divergence", None),
        Some(Error::NonFiniteLoss { .. }) => ("non_finite_loss", None),
        Some(Error::Generation { .. }) => ("generation", None),
        Some(Error::Format { .. }) => ("format", None),
        Some(Error::Io { .. }) => ("io", None),
        None => ("other", None),
    };
    let message = err.chain().map(|e| e.to_string()).collect::<Vec<_>>().join(": ");
    let mut body = json!({ "kind": kind, "message": message });
    if let Some(f) = field {
        body["field"] = f.into();
    }
    let code = if kind == "config" { 2 } else { 1 };
    (json!({ "error": body }).to_string(), code)
}
