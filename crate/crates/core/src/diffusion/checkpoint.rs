//! Binary parameter files: an 8-byte magic, a little-endian `u32` version and
//! `u64` header length, a JSON header, then every parameter as little-endian
//! `f64` values in header order.

use std::io::Read as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::train::AtomCountHistogram;
use super::CleanBounds;
use crate::model::{Mode, ModelConfig, Muformer};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MUDIFFCK";
const VERSION: u32 = 2;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint ({reason})")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: incompatible checkpoint: {reason}")]
    Incompatible { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub schedule_steps: usize,
    pub schedule_offset: f64,
    pub mode: Mode,
    pub model: ModelConfig,
    /// sha256 of the serialized model config.
    pub config_hash: String,
    pub atom_counts: AtomCountHistogram,
    pub bounds: CleanBounds,
}

/// A loaded checkpoint, rebuilt into a ready network.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Muformer,
    pub schedule: NoiseSchedule,
}

fn config_hash(cfg: &ModelConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("model config serializes");
    hex::encode(Sha256::digest(json))
}

pub fn save_checkpoint(
    path: &Path,
    net: &Muformer,
    schedule: &NoiseSchedule,
    mode: Mode,
    atom_counts: &AtomCountHistogram,
    bounds: &CleanBounds,
) -> Result<(), CheckpointError> {
    let header = CheckpointHeader {
        names: net.params.names().to_vec(),
        shapes: net.params.tensors().iter().map(|t| t.shape().to_vec()).collect(),
        schedule_steps: schedule.steps(),
        schedule_offset: schedule.offset(),
        mode,
        model: net.config.clone(),
        config_hash: config_hash(&net.config),
        atom_counts: atom_counts.clone(),
        bounds: bounds.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(20 + json.len() + 8 * net.params.scalar_count());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for t in net.params.tensors() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let format = |reason: &str| CheckpointError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let incompatible = |reason: String| CheckpointError::Incompatible {
        path: path.to_path_buf(),
        reason,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(format("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(incompatible(format!("version {version}, expected {VERSION}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + len).ok_or_else(|| format("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| incompatible(format!("header: {e}")))?;
    if header.config_hash != config_hash(&header.model) {
        return Err(incompatible("config hash does not match the stored config".into()));
    }
    header.model.validate().map_err(incompatible)?;
    if header.schedule_steps == 0 || !(header.schedule_offset >= 0.0) {
        return Err(incompatible("invalid schedule".into()));
    }
    if header.bounds.width() != header.model.layout.width() || header.bounds.feature_max.len() != header.bounds.width() {
        return Err(incompatible("clean-data bounds do not match the feature layout".into()));
    }
    if header.names.len() != header.shapes.len() {
        return Err(incompatible("names and shapes differ in length".into()));
    }

    // the freshly initialized values are overwritten below
    let mut init = rng::substream(0, "checkpoint");
    let mut model = Muformer::new(header.model.clone(), &mut init).map_err(|e| incompatible(e.to_string()))?;
    if model.params.names() != header.names.as_slice() {
        return Err(incompatible("parameter names do not match the model config".into()));
    }
    let mut offset = 20 + len;
    let mut values = Vec::with_capacity(header.shapes.len());
    for (i, shape) in header.shapes.iter().enumerate() {
        if model.params.tensor(i).shape() != shape.as_slice() {
            return Err(incompatible(format!("shape of {} does not match the model config", header.names[i])));
        }
        let count: usize = shape.iter().product();
        let raw = bytes
            .get(offset..offset + 8 * count)
            .ok_or_else(|| format("truncated parameter data"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        values.push(Tensor::new(shape.clone(), data).map_err(|e| incompatible(e.to_string()))?);
        offset += 8 * count;
    }
    if offset != bytes.len() {
        return Err(format("trailing bytes after parameter data"));
    }
    model.params.set_tensors(values).map_err(|e| incompatible(e.to_string()))?;
    let schedule = NoiseSchedule::cosine(header.schedule_steps, header.schedule_offset);
    Ok(Checkpoint { header, model, schedule })
}
