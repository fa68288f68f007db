//! Binary dataset container and CSV import.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! bytes 0..4   magic "STSF"
//! byte  4      version (1)
//! bytes 5..9   header length H (u32)
//! bytes 9..9+H UTF-8 JSON header with keys
//!              {"T","N","C","steps_per_day","name","channel_names"}
//! rest         T*N*C IEEE-754 f32 values, index order (t, node, channel)
//! ```

use super::RawDataset;
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"STSF";
const VERSION: u8 = 1;

/// Serialize a dataset into the container format. Values are narrowed to
/// f32; callers that need byte-exact round trips must hold values that are
/// exactly representable at 32 bits (the synthetic generator guarantees
/// this).
pub fn save_dataset(ds: &RawDataset, path: &Path) -> Result<()> {
    let header = serde_json::json!({
        "T": ds.num_steps,
        "N": ds.num_nodes,
        "C": ds.num_channels,
        "steps_per_day": ds.steps_per_day,
        "name": ds.name,
        "channel_names": ds.channel_names,
    });
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(9 + header_bytes.len() + ds.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for &v in &ds.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::DatasetSave(format!("{}: {e}", path.display())))
}

/// Parse a container file back into a dataset.
pub fn load_dataset(path: &Path) -> Result<RawDataset> {
    let bytes = fs::read(path)?;
    load_dataset_bytes(&bytes)
}

pub fn load_dataset_bytes(bytes: &[u8]) -> Result<RawDataset> {
    let fail = |offset: usize, reason: &str| Error::DatasetLoad {
        offset,
        reason: reason.to_string(),
    };
    if bytes.len() < 9 {
        return Err(fail(bytes.len(), "file shorter than fixed header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, "magic mismatch, expected \"STSF\""));
    }
    if bytes[4] != VERSION {
        return Err(fail(4, "unsupported version"));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if bytes.len() < 9 + header_len {
        return Err(fail(bytes.len(), "truncated JSON header"));
    }
    let header: serde_json::Value = serde_json::from_slice(&bytes[9..9 + header_len])
        .map_err(|e| fail(9, &format!("invalid JSON header: {e}")))?;
    let get_usize = |key: &str| -> Result<usize> {
        header
            .get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| fail(9, &format!("header missing numeric key \"{key}\"")))
    };
    let t = get_usize("T")?;
    let n = get_usize("N")?;
    let c = get_usize("C")?;
    let steps_per_day = get_usize("steps_per_day")?;
    let name = header
        .get("name")
        .and_then(|v| v.as_str())
        .ok_or_else(|| fail(9, "header missing key \"name\""))?
        .to_string();
    let channel_names: Vec<String> = header
        .get("channel_names")
        .and_then(|v| v.as_array())
        .ok_or_else(|| fail(9, "header missing key \"channel_names\""))?
        .iter()
        .map(|v| v.as_str().unwrap_or_default().to_string())
        .collect();

    let payload = &bytes[9 + header_len..];
    let expected = t * n * c * 4;
    if payload.len() < expected {
        return Err(fail(
            9 + header_len + payload.len(),
            &format!("payload has {} bytes, expected {expected}", payload.len()),
        ));
    }
    let mut values = Vec::with_capacity(t * n * c);
    for (i, chunk) in payload[..expected].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fail(
                9 + header_len + i * 4,
                "non-finite value without missing flag",
            ));
        }
        values.push(v as f64);
    }
    let mut ds = RawDataset::new(name, steps_per_day, t, n, c, values)?;
    if channel_names.len() == c {
        ds.channel_names = channel_names;
    }
    Ok(ds)
}

/// Import a dense CSV with a `timestamp,node,channel,value` header.
///
/// Timestamps must be integers; node and channel labels become indices in
/// sorted order. Every (timestamp, node, channel) combination must appear
/// exactly once.
pub fn import_csv(path: &Path, steps_per_day: usize, name: &str) -> Result<RawDataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "timestamp,node,channel,value" => {}
        Some((i, _)) => {
            return Err(Error::CsvImport {
                line: i + 1,
                reason: "expected header \"timestamp,node,channel,value\"".into(),
            })
        }
        None => {
            return Err(Error::CsvImport {
                line: 1,
                reason: "empty file".into(),
            })
        }
    }
    let mut rows: Vec<(i64, String, String, f64)> = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::CsvImport {
                line: i + 1,
                reason: format!("expected 4 columns, got {}", parts.len()),
            });
        }
        let ts: i64 = parts[0].trim().parse().map_err(|_| Error::CsvImport {
            line: i + 1,
            reason: format!("bad timestamp {:?}", parts[0]),
        })?;
        let value: f64 = parts[3].trim().parse().map_err(|_| Error::CsvImport {
            line: i + 1,
            reason: format!("bad value {:?}", parts[3]),
        })?;
        if !value.is_finite() {
            return Err(Error::CsvImport {
                line: i + 1,
                reason: "non-finite value".into(),
            });
        }
        rows.push((ts, parts[1].trim().to_string(), parts[2].trim().to_string(), value));
    }
    let mut timestamps: Vec<i64> = rows.iter().map(|r| r.0).collect();
    timestamps.sort_unstable();
    timestamps.dedup();
    let mut nodes: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
    nodes.sort();
    nodes.dedup();
    let mut channels: Vec<String> = rows.iter().map(|r| r.2.clone()).collect();
    channels.sort();
    channels.dedup();

    let (t, n, c) = (timestamps.len(), nodes.len(), channels.len());
    let mut values = vec![f64::NAN; t * n * c];
    for (ts, node, channel, v) in &rows {
        let ti = timestamps.binary_search(ts).unwrap();
        let ni = nodes.binary_search(node).unwrap();
        let ci = channels.binary_search(channel).unwrap();
        values[(ti * n + ni) * c + ci] = *v;
    }
    if let Some(pos) = values.iter().position(|v| v.is_nan()) {
        let ti = pos / (n * c);
        return Err(Error::CsvImport {
            line: 0,
            reason: format!(
                "missing cell for timestamp {} (dense grid required)",
                timestamps[ti]
            ),
        });
    }
    let mut ds = RawDataset::new(name, steps_per_day, t, n, c, values)?;
    ds.channel_names = channels;
    Ok(ds)
}
