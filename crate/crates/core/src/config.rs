//! Run configuration: one JSON file layered over a named profile, with
//! dotted `key=value` overrides on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::diffusion::{DecodeMode, OptimizerKind};
use crate::model::{Mode, ModelConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {source}")]
    Json {
        origin: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown profile {0:?}; expected toy, desk or paper")]
    Profile(String),
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("override {key}: {reason}")]
    Path { key: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Source of training molecules: a JSONL file, or the built-in generator
/// when no path is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub synthetic_count: usize,
    /// Largest molecule the generator emits, hydrogens included.
    pub synthetic_max_atoms: usize,
    /// Keep coordinates on only this many records.
    pub limited_3d: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Optimizer steps; each consumes one batch.
    pub steps: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub count: usize,
    pub decode: DecodeMode,
    /// Clip the clean estimate to the training range at each reverse step.
    pub clip: bool,
    /// Defaults to `checkpoint.bin` in the output directory.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Defaults to `samples.jsonl` in the output directory.
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    /// Root of every random substream.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub mode: Mode,
    pub sampling: SamplingConfig,
    pub eval: EvalConfig,
    pub out: PathBuf,
}

impl RunConfig {
    /// Tiny network and short chain for exhaustive checks.
    pub fn toy() -> Self {
        Self {
            profile: "toy".into(),
            model: ModelConfig::toy(),
            schedule: ScheduleConfig { steps: 20, offset: 0.008 },
            dataset: DatasetConfig {
                synthetic_count: 16,
                synthetic_max_atoms: 6,
                ..Self::desk().dataset
            },
            training: TrainingConfig {
                steps: 200,
                batch_size: 4,
            },
            ..Self::desk()
        }
    }

    /// Sized to train and verify on one core in minutes.
    pub fn desk() -> Self {
        Self {
            profile: "desk".into(),
            seed: 0,
            dataset: DatasetConfig {
                path: None,
                synthetic_count: 64,
                synthetic_max_atoms: 9,
                limited_3d: None,
            },
            schedule: ScheduleConfig { steps: 50, offset: 0.008 },
            model: ModelConfig::desk(),
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Sgd,
                learning_rate: 0.02,
                clip_norm: Some(10.0),
            },
            training: TrainingConfig {
                steps: 2000,
                batch_size: 8,
            },
            mode: Mode::Joint,
            sampling: SamplingConfig {
                count: 100,
                decode: DecodeMode::Deterministic,
                clip: true,
                checkpoint: None,
            },
            eval: EvalConfig { samples: None },
            out: PathBuf::from("runs/desk"),
        }
    }

    /// Full-size network and schedule; needs hours of accelerator time.
    pub fn paper() -> Self {
        Self {
            profile: "paper".into(),
            model: ModelConfig::paper(),
            schedule: ScheduleConfig { steps: 1000, offset: 1e-6 },
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                learning_rate: 1e-4,
                clip_norm: Some(10.0),
            },
            training: TrainingConfig {
                steps: 1_000_000,
                batch_size: 64,
            },
            sampling: SamplingConfig {
                count: 10_000,
                ..Self::desk().sampling
            },
            out: PathBuf::from("runs/paper"),
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self, ConfigError> {
        match name {
            "toy" => Ok(Self::toy()),
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(ConfigError::Profile(other.to_string())),
        }
    }

    /// Layers `file` (if any) over its `profile` (default desk), then applies
    /// each `key=value` override. Values parse as JSON and fall back to plain
    /// strings, so `--set mode=2d_only` and `--set model.layers=3` both work.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut layer = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|source| ConfigError::Json {
                    origin: path.display().to_string(),
                    source,
                })?
            }
            None => Value::Object(Default::default()),
        };
        if !layer.is_object() {
            return Err(ConfigError::Invalid("the config file must hold a JSON object".into()));
        }
        let mut pairs = Vec::with_capacity(overrides.len());
        for item in overrides {
            let (key, raw) = item.split_once('=').ok_or_else(|| ConfigError::Override(item.clone()))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            pairs.push((key.trim().to_string(), value));
        }
        // a profile chosen on the command line beats the file's
        let profile = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "profile")
            .map(|(_, v)| v.clone())
            .or_else(|| layer.get("profile").cloned());
        let profile = match profile {
            None => "desk".to_string(),
            Some(Value::String(s)) => s,
            Some(other) => return Err(ConfigError::Invalid(format!("profile must be a string, got {other}"))),
        };
        let mut merged = serde_json::to_value(Self::profile(&profile)?).expect("profiles serialize");
        merge(&mut merged, layer.take());
        for (key, value) in pairs {
            set_path(&mut merged, &key, value)?;
        }
        let cfg: Self = serde_json::from_value(merged).map_err(|source| ConfigError::Json {
            origin: "config".into(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        self.model.validate().map_err(ConfigError::Invalid)?;
        if self.schedule.steps == 0 {
            return bad("schedule.steps must be at least 1".into());
        }
        if !(self.schedule.offset >= 0.0) {
            return bad("schedule.offset must be non-negative".into());
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("optimizer.learning_rate must be positive".into());
        }
        if let Some(c) = self.optimizer.clip_norm {
            if !(c > 0.0) {
                return bad("optimizer.clip_norm must be positive when set".into());
            }
        }
        if self.training.batch_size == 0 {
            return bad("training.batch_size must be positive".into());
        }
        if self.dataset.path.is_none() && (self.dataset.synthetic_count == 0 || self.dataset.synthetic_max_atoms < 2) {
            return bad("a synthetic dataset needs synthetic_count >= 1 and synthetic_max_atoms >= 2".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.sampling.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint.bin"))
    }

    pub fn samples_path(&self) -> PathBuf {
        self.eval.samples.clone().unwrap_or_else(|| self.out.join("samples.jsonl"))
    }
}

/// Recursive object merge; non-object values in `top` replace those in `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        // unknown keys survive the merge so deserialization can reject them by name
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| ConfigError::Path {
            key: key.to_string(),
            reason: format!("{} is not an object", parts[..depth].join(".")),
        })?;
        if !obj.contains_key(*part) {
            return Err(ConfigError::Path {
                key: key.to_string(),
                reason: format!("no field {part:?}"),
            });
        }
        let slot = obj.get_mut(*part).expect("checked above");
        if depth + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}
