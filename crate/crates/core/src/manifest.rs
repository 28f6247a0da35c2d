//! Run manifests written next to command outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensorstore::FORMAT_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub checkpoint_format_version: u32,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input name → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output file (relative to the manifest) → SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub details: serde_json::Value,
    /// Fields below vary between otherwise identical runs.
    pub wall_time_secs: f64,
    pub threads: usize,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        RunManifest {
            command: command.into(),
            version: crate::VERSION.to_string(),
            checkpoint_format_version: FORMAT_VERSION,
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            details: serde_json::Value::Null,
            wall_time_secs: 0.0,
            threads: 1,
        }
    }

    /// Hashes each listed file under `dir` into `outputs`.
    pub fn record_outputs<I, S>(&mut self, dir: &Path, files: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for f in files {
            let f = f.as_ref();
            self.outputs.insert(f.to_string(), file_digest(&dir.join(f))?);
        }
        Ok(())
    }

    /// Digest over `outputs` only; equal for runs with identical artifacts.
    pub fn outputs_digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.outputs {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        write_atomic(path, &json)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes_digest(&bytes))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
