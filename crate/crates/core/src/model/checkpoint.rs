//! Checkpoint file format.
//!
//! Layout: 8-byte magic, little-endian u64 header length, JSON header, then a
//! flat payload of little-endian 32-bit floats. The header records the model
//! config, the training routing mode (when known), and for every parameter
//! its name, shape, and byte offset into the payload. Weights are stored as
//! f32 regardless of the in-memory element type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelConfig, ModelError};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"RCLAMDL1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint is missing parameter {name}")]
    MissingParam { name: String },
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_mode: Option<String>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    numel: u64,
}

pub fn save_checkpoint<F: Scalar>(
    path: impl AsRef<Path>,
    model: &Model<F>,
    train_mode: Option<&str>,
) -> Result<(), CheckpointError> {
    let named = model.named_params();
    let mut entries = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, tensor) in &named {
        entries.push(ParamEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
            numel: tensor.numel() as u64,
        });
        offset += tensor.numel() as u64 * 4;
    }
    let header = Header {
        format: "rcla-checkpoint".to_string(),
        config: model.config,
        train_mode: train_mode.map(str::to_string),
        params: entries,
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for (_, tensor) in &named {
        for v in tensor.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint, returning the model and the recorded training mode.
pub fn load_checkpoint<F: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(Model<F>, Option<String>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;

    let mut model = Model::<F>::zeros(header.config)?;
    for (name, tensor) in model.named_params_mut() {
        let entry = header
            .params
            .iter()
            .find(|e| e.name == name)
            .ok_or(CheckpointError::MissingParam { name: name.clone() })?;
        if entry.shape != tensor.shape() {
            return Err(CheckpointError::ParamShape {
                name,
                found: entry.shape.clone(),
                expected: tensor.shape().to_vec(),
            });
        }
        let start = entry.offset as usize;
        for (i, slot) in tensor.data_mut().iter_mut().enumerate() {
            let at = start + i * 4;
            let bytes: [u8; 4] = payload
                .get(at..at + 4)
                .ok_or(CheckpointError::BadMagic)?
                .try_into()
                .expect("length checked");
            *slot = F::from_f64(f32::from_le_bytes(bytes) as f64);
        }
    }
    Ok((model, header.train_mode))
}
