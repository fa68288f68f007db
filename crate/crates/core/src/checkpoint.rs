//! Parameter checkpoint container shared by both training stages.
//!
//! Layout: magic "STCP", version byte, u32-LE JSON length, JSON metadata,
//! then the parameter payload as 64-bit little-endian floats in metadata
//! order. Metadata records config, seed, epoch, and hashes so downstream
//! consumers can detect stale artifacts.

use crate::error::{Error, Result};
use crate::tensor::Param;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"STCP";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in floats.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    /// SHA-256 of the payload bytes.
    pub param_hash: String,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    payload: Vec<f64>,
}

/// Hex SHA-256 of a canonical JSON value (object keys are sorted by
/// serde_json's default BTreeMap ordering).
pub fn hash_json(value: &serde_json::Value) -> String {
    let text = serde_json::to_string(value).expect("json serialization cannot fail");
    hex_digest(text.as_bytes())
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn payload_bytes(params: &[&Param]) -> Vec<u8> {
    let total: usize = params.iter().map(|p| p.numel()).sum();
    let mut bytes = Vec::with_capacity(total * 8);
    for p in params {
        for &v in &p.value {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

/// Hash of the parameter payload alone; used for bank provenance checks.
pub fn params_hash(params: &[&Param]) -> String {
    hex_digest(&payload_bytes(params))
}

pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: &serde_json::Value,
    seed: u64,
    epoch: usize,
    params: &[&Param],
) -> Result<CheckpointMeta> {
    let payload = payload_bytes(params);
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0;
    for p in params {
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset,
            len: p.numel(),
        });
        offset += p.numel();
    }
    let meta = CheckpointMeta {
        kind: kind.to_string(),
        config: config.clone(),
        config_hash: hash_json(config),
        seed,
        epoch,
        param_hash: hex_digest(&payload),
        params: entries,
    };
    let meta_bytes = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(9 + meta_bytes.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    out.extend_from_slice(&payload);

    // Atomic write: temp file in the same directory, then rename.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &out).map_err(|e| Error::CheckpointIo(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| Error::CheckpointIo(format!("{}: {e}", path.display())))?;
    Ok(meta)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes =
        fs::read(path).map_err(|e| Error::CheckpointIo(format!("{}: {e}", path.display())))?;
    if bytes.len() < 9 || &bytes[0..4] != MAGIC {
        return Err(Error::CheckpointIo(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    if bytes[4] != VERSION {
        return Err(Error::CheckpointIo(format!(
            "{}: unsupported version {}",
            path.display(),
            bytes[4]
        )));
    }
    let meta_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if bytes.len() < 9 + meta_len {
        return Err(Error::CheckpointIo(format!(
            "{}: truncated metadata",
            path.display()
        )));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[9..9 + meta_len])?;
    let payload_bytes = &bytes[9 + meta_len..];
    let expected: usize = meta.params.iter().map(|p| p.len).sum();
    if payload_bytes.len() != expected * 8 {
        return Err(Error::CheckpointIo(format!(
            "{}: payload has {} bytes, expected {}",
            path.display(),
            payload_bytes.len(),
            expected * 8
        )));
    }
    if hex_digest(payload_bytes) != meta.param_hash {
        return Err(Error::CheckpointIo(format!(
            "{}: payload hash mismatch",
            path.display()
        )));
    }
    let payload: Vec<f64> = payload_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint { meta, payload })
}

impl Checkpoint {
    /// Copy stored values into a parameter list, matching entries by name
    /// and validating shapes.
    pub fn apply_to(&self, params: &mut [&mut Param]) -> Result<()> {
        for param in params.iter_mut() {
            let entry = self
                .meta
                .params
                .iter()
                .find(|e| e.name == param.name)
                .ok_or_else(|| {
                    Error::CheckpointIo(format!("checkpoint has no parameter {:?}", param.name))
                })?;
            if entry.shape != param.shape {
                return Err(Error::CheckpointIo(format!(
                    "parameter {:?} shape mismatch: checkpoint {:?} vs model {:?}",
                    param.name, entry.shape, param.shape
                )));
            }
            param
                .value
                .copy_from_slice(&self.payload[entry.offset..entry.offset + entry.len]);
        }
        Ok(())
    }

    pub fn values(&self, name: &str) -> Option<&[f64]> {
        let e = self.meta.params.iter().find(|e| e.name == name)?;
        Some(&self.payload[e.offset..e.offset + e.len])
    }
}
