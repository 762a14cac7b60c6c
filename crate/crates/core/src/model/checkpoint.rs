//! Checkpoint layout: one JSON manifest line (config, vocabulary, training
//! log and a tensor directory), a newline, then every tensor as raw
//! little-endian f64 in directory order. Offsets in the directory are
//! relative to the first payload byte.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParameters;
use super::train::EpochLoss;
use super::{ModelError, TopicModel};
use crate::corpus::Vocabulary;

pub const FORMAT: &str = "ctm-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub training_log: Vec<EpochLoss>,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn payload_len(&self) -> u64 {
        self.tensors.iter().map(|t| t.length).sum()
    }
}

pub fn to_bytes(model: &TopicModel) -> Vec<u8> {
    let tensors = model.params.named_tensors();
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|(name, shape, data)| {
            let length = 8 * data.len() as u64;
            let e = TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                length,
            };
            offset += length;
            e
        })
        .collect();
    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: FORMAT_VERSION,
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        training_log: model.training_log.clone(),
        tensors: entries,
    };
    let mut bytes = serde_json::to_vec(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    for (_, _, data) in &tensors {
        for v in *data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

/// Splits a checkpoint into its parsed manifest and the payload bytes.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8]), String> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing manifest line")?;
    let header: serde_json::Value =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| format!("corrupt manifest: {e}"))?;
    match header.get("format").and_then(|f| f.as_str()) {
        Some(FORMAT) => {}
        other => return Err(format!("not a checkpoint (format {other:?})")),
    }
    match header.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        other => return Err(format!("unsupported checkpoint version {other:?}")),
    }
    let manifest: Manifest =
        serde_json::from_value(header).map_err(|e| format!("corrupt manifest: {e}"))?;
    Ok((manifest, &bytes[newline + 1..]))
}

pub fn from_bytes(bytes: &[u8]) -> Result<TopicModel, String> {
    let (manifest, payload) = read_manifest(bytes)?;
    let expected = manifest.payload_len();
    if (payload.len() as u64) < expected {
        return Err(format!(
            "truncated payload: {} bytes, manifest declares {expected}",
            payload.len()
        ));
    }
    if (payload.len() as u64) > expected {
        return Err(format!(
            "{} trailing bytes after the declared payload",
            payload.len() as u64 - expected
        ));
    }
    let config = manifest.config;
    config.validate().map_err(|e| e.to_string())?;
    let vocab = Vocabulary::from_tokens(manifest.vocab).map_err(|e| e.to_string())?;
    if vocab.len() != config.vocab_size {
        return Err(format!(
            "vocabulary has {} tokens, config says {}",
            vocab.len(),
            config.vocab_size
        ));
    }

    let mut params = ModelParameters::zeros(&config);
    let expected_shapes: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    let found: Vec<(String, Vec<usize>)> = manifest
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.shape.clone()))
        .collect();
    if expected_shapes != found {
        return Err("tensor directory does not match the configured architecture".into());
    }
    for ((_, dst), entry) in params
        .named_tensors_mut()
        .into_iter()
        .zip(&manifest.tensors)
    {
        if entry.length != 8 * dst.len() as u64 {
            return Err(format!("tensor {} has inconsistent length", entry.name));
        }
        let start = usize::try_from(entry.offset).map_err(|_| "offset overflow")?;
        let end = start + entry.length as usize;
        let src = payload
            .get(start..end)
            .ok_or_else(|| format!("tensor {} lies outside the payload", entry.name))?;
        for (d, chunk) in dst.iter_mut().zip(src.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    if !params.all_finite() {
        return Err("non-finite tensor values".into());
    }
    if params
        .named_tensors()
        .iter()
        .filter(|(n, _, _)| n.ends_with("running_var"))
        .any(|(_, _, d)| d.iter().any(|&v| v < 0.0))
    {
        return Err("negative running variance".into());
    }
    Ok(TopicModel {
        config,
        params,
        vocab,
        training_log: manifest.training_log,
    })
}

pub fn save_model(model: &TopicModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let io_err = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let bytes = to_bytes(model);
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&bytes).map_err(io_err)?;
    f.flush().map_err(io_err)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TopicModel, ModelError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes).map_err(|message| ModelError::Checkpoint {
        path: path.display().to_string(),
        message,
    })
}
