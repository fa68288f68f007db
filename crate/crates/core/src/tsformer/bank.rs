//! Representation bank: cached mask-free encoder outputs for every
//! forecasting-stage window, so the frozen encoder never re-runs during
//! forecaster training.
//!
//! File layout: magic "STRB", version byte, u32-LE JSON index, payload of
//! 32-bit little-endian floats (one P*d block per (node, start) entry, in
//! index order). The in-memory bank keeps full f64 precision; the file
//! narrows to f32.

use super::TSFormer;
use crate::data::RawDataset;
use crate::error::{Error, Result};
use crate::tensor::Ctx;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"STRB";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BankIndex {
    d: usize,
    num_patches: usize,
    num_nodes: usize,
    config_hash: String,
    checkpoint_hash: String,
    starts: Vec<usize>,
}

/// Cached per-patch representations H_j for every node and window start.
#[derive(Debug, Clone)]
pub struct RepresentationBank {
    pub d: usize,
    pub num_patches: usize,
    pub num_nodes: usize,
    pub config_hash: String,
    pub checkpoint_hash: String,
    starts: Vec<usize>,
    /// Layout: [start_idx][node][patch][d], flattened.
    data: Vec<f64>,
}

impl RepresentationBank {
    /// Run the mask-free encoder over every (node, window start) pair.
    ///
    /// Entries are computed in parallel; each writes a disjoint slot, so the
    /// result is bit-identical regardless of scheduling.
    pub fn precompute(
        model: &TSFormer,
        ds: &RawDataset,
        starts: &[usize],
        config_hash: &str,
        checkpoint_hash: &str,
    ) -> Result<Self> {
        let p = model.cfg.num_patches;
        let l = model.cfg.patch_len;
        let d = model.cfg.d_model;
        let c = ds.num_channels;
        let n = ds.num_nodes;
        let mut starts = starts.to_vec();
        starts.sort_unstable();
        starts.dedup();
        for &s in &starts {
            if s + p * l > ds.num_steps {
                return Err(Error::WindowTooLong {
                    window: s + p * l,
                    available: ds.num_steps,
                });
            }
        }
        let block = p * d;
        let mut data = vec![0.0; starts.len() * n * block];
        let chunks: Vec<(usize, Vec<f64>)> = starts
            .par_iter()
            .enumerate()
            .flat_map(|(si, &start)| {
                (0..n).into_par_iter().map(move |node| {
                    let mut patches = Vec::with_capacity(p * l * c);
                    for step in 0..p * l {
                        for ch in 0..c {
                            patches.push(ds.at(start + step, node, ch));
                        }
                    }
                    let mut cx = Ctx::new();
                    let t = cx.constant(patches, &[p, l * c]);
                    let h = model.representations(&mut cx, &t);
                    ((si * n + node), h.to_vec())
                })
            })
            .collect();
        for (slot, values) in chunks {
            data[slot * block..(slot + 1) * block].copy_from_slice(&values);
        }
        Ok(RepresentationBank {
            d,
            num_patches: p,
            num_nodes: n,
            config_hash: config_hash.to_string(),
            checkpoint_hash: checkpoint_hash.to_string(),
            starts,
            data,
        })
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    fn slot(&self, node: usize, start: usize) -> Result<usize> {
        let si = self
            .starts
            .binary_search(&start)
            .map_err(|_| Error::BankMiss { node, start })?;
        if node >= self.num_nodes {
            return Err(Error::BankMiss { node, start });
        }
        Ok(si * self.num_nodes + node)
    }

    /// Concatenated feature H^i = H_1 || ... || H_P for one node and window,
    /// length P*d.
    pub fn feature(&self, node: usize, start: usize) -> Result<&[f64]> {
        let block = self.num_patches * self.d;
        let s = self.slot(node, start)?;
        Ok(&self.data[s * block..(s + 1) * block])
    }

    /// Final-patch representation H_P, length d.
    pub fn last_patch(&self, node: usize, start: usize) -> Result<&[f64]> {
        let f = self.feature(node, start)?;
        Ok(&f[(self.num_patches - 1) * self.d..])
    }

    /// Per-node mean of H^i over a set of window starts; the fixed kNN
    /// feature for graph regularization. (N, P*d) row-major.
    pub fn node_mean_features(&self, starts: &[usize]) -> Result<Vec<f64>> {
        let block = self.num_patches * self.d;
        let mut out = vec![0.0; self.num_nodes * block];
        if starts.is_empty() {
            return Err(Error::InvalidConfig(
                "node_mean_features: no window starts given".into(),
            ));
        }
        for node in 0..self.num_nodes {
            for &s in starts {
                let f = self.feature(node, s)?;
                for (acc, v) in out[node * block..(node + 1) * block].iter_mut().zip(f) {
                    *acc += v;
                }
            }
            for v in out[node * block..(node + 1) * block].iter_mut() {
                *v /= starts.len() as f64;
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let index = BankIndex {
            d: self.d,
            num_patches: self.num_patches,
            num_nodes: self.num_nodes,
            config_hash: self.config_hash.clone(),
            checkpoint_hash: self.checkpoint_hash.clone(),
            starts: self.starts.clone(),
        };
        let index_bytes = serde_json::to_vec(&index)?;
        let mut out = Vec::with_capacity(9 + index_bytes.len() + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(index_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&index_bytes);
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &out).map_err(|e| Error::CheckpointIo(format!("{}: {e}", tmp.display())))?;
        fs::rename(&tmp, path)
            .map_err(|e| Error::CheckpointIo(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    /// Load a bank, verifying it was produced by the expected checkpoint.
    pub fn load(path: &Path, expected_checkpoint_hash: Option<&str>) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::CheckpointIo(format!("{}: {e}", path.display())))?;
        if bytes.len() < 9 || &bytes[0..4] != MAGIC {
            return Err(Error::CheckpointIo(format!(
                "{}: not a representation bank",
                path.display()
            )));
        }
        if bytes[4] != VERSION {
            return Err(Error::CheckpointIo(format!(
                "{}: unsupported bank version {}",
                path.display(),
                bytes[4]
            )));
        }
        let index_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let index: BankIndex = serde_json::from_slice(&bytes[9..9 + index_len])?;
        if let Some(expected) = expected_checkpoint_hash {
            if expected != index.checkpoint_hash {
                return Err(Error::StaleBank {
                    bank_hash: index.checkpoint_hash,
                    expected_hash: expected.to_string(),
                });
            }
        }
        let payload = &bytes[9 + index_len..];
        let expected_floats = index.starts.len() * index.num_nodes * index.num_patches * index.d;
        if payload.len() != expected_floats * 4 {
            return Err(Error::CheckpointIo(format!(
                "{}: bank payload has {} bytes, expected {}",
                path.display(),
                payload.len(),
                expected_floats * 4
            )));
        }
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(RepresentationBank {
            d: index.d,
            num_patches: index.num_patches,
            num_nodes: index.num_nodes,
            config_hash: index.config_hash,
            checkpoint_hash: index.checkpoint_hash,
            starts: index.starts,
            data,
        })
    }
}
