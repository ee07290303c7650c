//! Single-file checkpoints.
//!
//! Layout: the 16-byte magic `FAMAE-CKPT\0\0\0\0\0\0`, a little-endian `u64`
//! header length, a UTF-8 JSON header, then every parameter as raw
//! little-endian `f64` in header manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 16] = b"FAMAE-CKPT\0\0\0\0\0\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub epoch: usize,
    pub seed: u64,
    /// Free-form metadata, e.g. the classifier's channel list.
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub store: ParamStore,
}

pub fn encode_checkpoint(
    config: &ModelConfig,
    epoch: usize,
    seed: u64,
    meta: serde_json::Value,
    store: &ParamStore,
) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        config: config.clone(),
        epoch,
        seed,
        meta,
        params: store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: [p.rows, p.cols],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(24 + json.len() + 8 * store.count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 24 || &bytes[..16] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = 24usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[24..body]).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let need: usize = header.params.iter().map(|p| p.shape[0] * p.shape[1]).sum();
    if bytes.len() - body != 8 * need {
        return Err(Error::Checkpoint(format!(
            "{} payload bytes, manifest declares {need} values",
            bytes.len() - body
        )));
    }
    let mut values = bytes[body..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut store = ParamStore::new();
    for p in &header.params {
        let n = p.shape[0] * p.shape[1];
        store.add(p.name.clone(), p.shape[0], p.shape[1], values.by_ref().take(n).collect());
    }
    Ok(Checkpoint { header, store })
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    epoch: usize,
    seed: u64,
    meta: serde_json::Value,
    store: &ParamStore,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_checkpoint(config, epoch, seed, meta, store)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    decode_checkpoint(&fs::read(path)?)
}
