//! Atomic file outputs and the run manifest written beside them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Writes `path` through a sibling temporary file and a rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::Builder::new()
        .prefix(".ctm-")
        .tempfile_in(dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    write(tmp.path())?;
    tmp.persist(path)
        .with_context(|| format!("cannot move output into place at {}", path.display()))?;
    Ok(())
}

pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |tmp| {
        fs::write(tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))
    })
}

/// Tracks the outputs of one command. Unless [`Outputs::commit`] is called,
/// everything written so far is removed on drop.
pub struct Outputs {
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self {
            written: Vec::new(),
            committed: false,
        }
    }

    pub fn write(&mut self, path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        write_atomic(path, write)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_bytes_atomic(path, bytes)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub duration_secs: f64,
    pub tool_version: &'static str,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>, started: Instant) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seed,
            duration_secs: started.elapsed().as_secs_f64(),
            tool_version: env!("CARGO_PKG_VERSION"),
        }
    }

    pub fn input(mut self, name: &str, path: Option<&Path>) -> Self {
        if let Some(p) = path {
            self.inputs.insert(name.to_string(), p.to_path_buf());
        }
        self
    }

    /// Records the outputs written so far and adds the manifest itself as
    /// `<primary>.manifest.json`.
    pub fn write_beside(mut self, primary: &Path, outputs: &mut Outputs) -> Result<()> {
        self.outputs = outputs.paths().to_vec();
        let path = manifest_path(primary);
        let mut json = serde_json::to_vec_pretty(&self).context("serializing run manifest")?;
        json.write_all(b"\n")?;
        outputs.write_bytes(&path, &json)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    sibling(primary, ".manifest.json")
}

/// `primary` with `suffix` appended to its file name.
pub fn sibling(primary: &Path, suffix: &str) -> PathBuf {
    let mut name = primary
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "output".into());
    name.push(suffix);
    primary.with_file_name(name)
}
