//! Run configuration: built-in defaults, overlaid by a JSON config file,
//! overlaid by command-line flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use spp_core::videoio::{load_frames, synth_clip};
use spp_core::{FrameSequence32, SppConfig, SynthKind, TrainConfig};

/// Bad flags or settings; mapped to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct DataConfig {
    /// Synthetic clip; ignored when `input` is set.
    pub synth: Option<SynthKind>,
    /// Directory of PPM/PNG frames.
    pub input: Option<PathBuf>,
    pub pattern: Option<String>,
    pub crop: Option<[usize; 2]>,
    /// Synthetic clip length, or the number of leading frames kept from `input`.
    pub frames: Option<usize>,
    /// Synthetic frame size `[height, width]`.
    pub size: [usize; 2],
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synth: Some(SynthKind::BouncingBox),
            input: None,
            pattern: None,
            crop: None,
            frames: None,
            size: [32, 64],
            seed: 0,
        }
    }
}

pub const DEFAULT_SYNTH_FRAMES: usize = 8;

impl DataConfig {
    pub fn load(&self) -> Result<FrameSequence32> {
        let seq = match (&self.input, self.synth) {
            (Some(dir), _) => {
                let crop = self.crop.map(|[h, w]| (h, w));
                let mut seq = load_frames::<f32>(dir, self.pattern.as_deref(), crop)?;
                if let Some(n) = self.frames {
                    if n == 0 || n > seq.len() {
                        return usage(format!("--frames {n} but {} holds {} frames", dir.display(), seq.len()));
                    }
                    seq = seq.truncated(n)?;
                }
                seq
            }
            (None, Some(kind)) => {
                let [h, w] = self.size;
                synth_clip::<f32>(kind, self.frames.unwrap_or(DEFAULT_SYNTH_FRAMES), h, w, self.seed)?
            }
            (None, None) => return usage("no input: pass --synth KIND or --input DIR"),
        };
        Ok(seq)
    }
}

/// Everything `train` and `rd-sweep` need.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: SppConfig,
    pub train: TrainConfig,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Reads a config file. A run manifest is accepted too; its `config` record
/// is used.
pub fn read_config_value(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
    if value.get("command").is_some() {
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
    }
    Ok(value)
}

/// `defaults`, overlaid field by field with the file at `path`.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: &T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(serde_json::from_value(serde_json::to_value(defaults)?)?);
    };
    let mut base = serde_json::to_value(defaults)?;
    merge(&mut base, read_config_value(path)?);
    serde_json::from_value(base).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}

/// Parses `HxW`.
pub fn parse_size(s: &str) -> Result<[usize; 2], String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    Ok([h, w])
}

/// Parses a kebab-case enum value through its serde name.
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| format!("{s:?}: {e}"))
}
