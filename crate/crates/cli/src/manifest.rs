use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Record written next to every command's outputs. Its `config` can be fed
/// back through `--config` to repeat the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str, config: impl Serialize, seed: Option<u64>, started_unix: f64) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: VERSION.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            started_unix,
            finished_unix: started_unix,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        self.finished_unix = now();
        self.outputs.push(path.to_path_buf());
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Manifest path for a single-file output: `model.bits` -> `model.bits.manifest.json`.
pub fn beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    file.with_file_name(name)
}
