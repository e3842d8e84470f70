//! Checkpoint file: one JSON manifest line, then every tensor as
//! little-endian `f64` values in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use super::NumericsError;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
    /// Free-form model description (architecture, scalers, config).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode_checkpoint(store: &ParamStore, meta: serde_json::Value) -> Result<Vec<u8>, NumericsError> {
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        tensors: store
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                shape: [t.rows(), t.cols()],
            })
            .collect(),
        meta,
    };
    let mut out = serde_json::to_vec(&manifest).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    out.push(b'\n');
    for (_, t) in store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value), NumericsError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| NumericsError::Checkpoint("missing manifest line".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| NumericsError::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    let mut body = &bytes[nl + 1..];
    let mut store = ParamStore::new();
    for e in &manifest.tensors {
        let n = e.shape[0] * e.shape[1];
        if body.len() < n * 8 {
            return Err(NumericsError::Checkpoint(format!("truncated data for {}", e.name)));
        }
        let data = body[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        body = &body[n * 8..];
        store.add(&e.name, Tensor::new(e.shape[0], e.shape[1], data)?)?;
    }
    if !body.is_empty() {
        return Err(NumericsError::Checkpoint(format!("{} trailing bytes", body.len())));
    }
    Ok((store, manifest.meta))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<(), NumericsError> {
    let bytes = encode_checkpoint(store, meta)?;
    fs::write(path, bytes).map_err(|source| NumericsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value), NumericsError> {
    let bytes = fs::read(path).map_err(|source| NumericsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
