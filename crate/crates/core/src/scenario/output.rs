//! Output directory bookkeeping: stamped data files and the run manifest.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learners::SnapshotTrajectory;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";

/// Hex SHA-256 of the compact JSON text of `value`. Object keys serialize in
/// sorted order, so equal configs hash equally whatever their key order.
pub fn config_hash(value: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub output_dir: PathBuf,
    /// Data files written by the run, relative to `output_dir`.
    pub outputs: Vec<String>,
}

pub(crate) fn unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    data: &'a T,
}

/// Writes data files into one directory, each stamped with the config hash.
pub(crate) struct Outputs {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: PathBuf, hash: String) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Outputs {
            dir,
            hash,
            files: Vec::new(),
        })
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn write(&mut self, name: &str, body: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    /// Pretty JSON object with a top-level `config_hash` field.
    pub fn json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<()> {
        let stamped = Stamped {
            config_hash: &self.hash,
            data,
        };
        let mut text = serde_json::to_string_pretty(&stamped)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// CSV preceded by a `# config_hash=...` comment line.
    pub fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("# config_hash={}\n{body}", self.hash);
        self.write(name, text.as_bytes())
    }

    /// Snapshot lines preceded by a `#` comment line carrying the hash.
    pub fn jsonl(&mut self, name: &str, trajectory: &SnapshotTrajectory) -> Result<()> {
        let mut text = format!("# config_hash={}\n", self.hash);
        for s in &trajectory.snapshots {
            text.push_str(&serde_json::to_string(s)?);
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    /// Plain pretty JSON, no stamp.
    pub fn raw_json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}
