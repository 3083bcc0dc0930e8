//! Binary model checkpoints.
//!
//! Wire format: the magic bytes `EMJB`, a version byte (currently 0x01), an
//! 8-byte little-endian header length, a UTF-8 JSON header carrying the
//! model configuration, the SHA-256 of the vocabulary it was trained
//! against, and a tensor manifest (name, shape, dtype, byte offset, byte
//! length), followed by the raw tensor data: little-endian IEEE-754 32-bit
//! floats, concatenated in manifest order. Round trips are bit-exact.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use super::{tensor_layout, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numeric::{Parameter, Tensor};
use crate::tokenizer::Vocabulary;

/// File signature of a model checkpoint.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EMJB";
/// Format version written by this crate.
pub const CHECKPOINT_VERSION: u8 = 0x01;
/// Bytes before the JSON header: magic, version, header length.
const PREAMBLE_LEN: usize = 4 + 1 + 8;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: u64,
    byte_len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_sha256: String,
    manifest: Vec<TensorEntry>,
}

/// A deserialized checkpoint: the model plus the vocabulary hash it is tied
/// to. The hash must be verified against the actual vocabulary before use.
#[derive(Clone, Debug)]
pub struct LoadedCheckpoint {
    pub model: Model<f32>,
    pub vocab_sha256: String,
}

impl LoadedCheckpoint {
    /// Refuse to pair this checkpoint with a vocabulary other than the one
    /// it was trained against.
    pub fn verify_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let actual = vocab.sha256();
        if actual != self.vocab_sha256 {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash mismatch: checkpoint was built against {} but got {}",
                self.vocab_sha256, actual
            )));
        }
        Ok(())
    }
}

/// Serialize a model to `path`. Tensors are written in the canonical
/// serialization order so that identical models produce identical bytes.
pub fn save_checkpoint(model: &Model<f32>, vocab_sha256: &str, path: &Path) -> Result<()> {
    let params: Vec<&Parameter<f32>> = model
        .encoder
        .params()
        .iter()
        .chain(model.head.params())
        .collect();
    let mut manifest = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for p in &params {
        let byte_len = (p.value.numel() * 4) as u64;
        manifest.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: "f32".to_string(),
            byte_offset: offset,
            byte_len,
        });
        offset += byte_len;
    }
    let header = Header {
        config: model.config.clone(),
        vocab_sha256: vocab_sha256.to_string(),
        manifest,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

    let mut bytes = Vec::with_capacity(PREAMBLE_LEN + header_json.len() + offset as usize);
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.push(CHECKPOINT_VERSION);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for p in &params {
        for v in p.value.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read and validate a checkpoint. Every failure mode (wrong magic, unknown
/// version, truncation, manifest inconsistency) is a distinct error rather
/// than garbage weights.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < PREAMBLE_LEN {
        return Err(Error::Checkpoint(format!(
            "truncated checkpoint: {} bytes is shorter than the preamble",
            bytes.len()
        )));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}: not a model checkpoint",
            &bytes[..4]
        )));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            bytes[4]
        )));
    }
    let header_len = u64::from_le_bytes(bytes[5..PREAMBLE_LEN].try_into().unwrap()) as usize;
    let data_start = PREAMBLE_LEN
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            Error::Checkpoint(format!(
                "truncated checkpoint: header claims {header_len} bytes but only {} remain",
                bytes.len() - PREAMBLE_LEN
            ))
        })?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE_LEN..data_start])
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    header.config.validate()?;

    // The manifest must match the canonical layout for this configuration:
    // same tensors, same order, contiguous f32 data from offset zero.
    let layout = tensor_layout(&header.config);
    if header.manifest.len() != layout.len() {
        return Err(Error::Checkpoint(format!(
            "manifest inconsistency: {} tensors listed, layout has {}",
            header.manifest.len(),
            layout.len()
        )));
    }
    let mut expected_offset = 0u64;
    for (entry, (name, shape)) in header.manifest.iter().zip(&layout) {
        if entry.name != *name || entry.shape != *shape {
            return Err(Error::Checkpoint(format!(
                "manifest inconsistency: entry {:?} {:?} does not match layout {:?} {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        if entry.dtype != "f32" {
            return Err(Error::Checkpoint(format!(
                "manifest inconsistency: tensor {:?} has dtype {:?}",
                entry.name, entry.dtype
            )));
        }
        let numel: usize = entry.shape.iter().product();
        if entry.byte_offset != expected_offset || entry.byte_len != (numel * 4) as u64 {
            return Err(Error::Checkpoint(format!(
                "manifest inconsistency: tensor {:?} at offset {} length {}, expected offset {} length {}",
                entry.name,
                entry.byte_offset,
                entry.byte_len,
                expected_offset,
                numel * 4
            )));
        }
        expected_offset += entry.byte_len;
    }
    let data = &bytes[data_start..];
    if (data.len() as u64) < expected_offset {
        return Err(Error::Checkpoint(format!(
            "truncated checkpoint: manifest needs {expected_offset} data bytes, found {}",
            data.len()
        )));
    }
    if (data.len() as u64) > expected_offset {
        return Err(Error::Checkpoint(format!(
            "manifest inconsistency: {} trailing bytes after the last tensor",
            data.len() as u64 - expected_offset
        )));
    }

    let mut params = Vec::with_capacity(header.manifest.len());
    for entry in &header.manifest {
        let start = entry.byte_offset as usize;
        let end = start + entry.byte_len as usize;
        let values: Vec<f32> = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Parameter::new(
            entry.name.clone(),
            Tensor::from_vec(&entry.shape, values)?,
        ));
    }
    let model = Model::from_parts(header.config, params)?;
    Ok(LoadedCheckpoint {
        model,
        vocab_sha256: header.vocab_sha256,
    })
}
