//! Binary checkpoint container.
//!
//! Layout: an 8-byte little-endian header length, a UTF-8 JSON header
//! (format version, free-form metadata, tensor directory with shapes and
//! byte offsets), then tensor payloads as little-endian f32, concatenated in
//! sorted tensor-name order. Sorted maps plus canonical JSON make the bytes
//! a pure function of the contents, so identical states produce identical
//! files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Free-form metadata: model config, schedule, stage, step counters.
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Array2<f64>>,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    shape: [usize; 2],
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: serde_json::Value,
    tensors: BTreeMap<String, TensorInfo>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    /// Required metadata field lookup.
    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::ParseError(format!("checkpoint meta missing string field {key}")))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::ParseError(format!("checkpoint meta missing integer field {key}")))
    }
}

/// Serializes to the container format. Values are quantized to f32.
pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut infos = BTreeMap::new();
    let mut offset = 0u64;
    for (name, arr) in &ckpt.tensors {
        infos.insert(
            name.clone(),
            TensorInfo {
                shape: [arr.nrows(), arr.ncols()],
                dtype: "f32".into(),
                offset,
            },
        );
        offset += (arr.len() * 4) as u64;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        meta: ckpt.meta.clone(),
        tensors: infos,
    };
    let header_json = serde_json::to_string(&header)
        .map_err(|e| Error::ParseError(format!("checkpoint header serialization: {e}")))?;
    let header_bytes = header_json.as_bytes();
    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset as usize);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(header_bytes);
    for arr in ckpt.tensors.values() {
        for v in arr.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 {
        return Err(Error::ParseError(
            "checkpoint shorter than its length prefix".into(),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes")) as usize;
    let body_start = 8 + header_len;
    if bytes.len() < body_start {
        return Err(Error::ParseError(format!(
            "checkpoint header claims {header_len} bytes but only {} remain",
            bytes.len() - 8
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[8..body_start])
        .map_err(|e| Error::ParseError(format!("checkpoint header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::ParseError(format!(
            "unsupported checkpoint format version {}",
            header.format_version
        )));
    }
    let payload = &bytes[body_start..];
    let mut tensors = BTreeMap::new();
    for (name, info) in header.tensors {
        if info.dtype != "f32" {
            return Err(Error::ParseError(format!(
                "tensor {name} has unsupported dtype {}",
                info.dtype
            )));
        }
        let count = info.shape[0] * info.shape[1];
        let start = info.offset as usize;
        let end = start + count * 4;
        if end > payload.len() {
            return Err(Error::ParseError(format!(
                "tensor {name} extends past end of file"
            )));
        }
        let mut arr = Array2::zeros((info.shape[0], info.shape[1]));
        for (k, slot) in arr.iter_mut().enumerate() {
            let at = start + k * 4;
            let raw: [u8; 4] = payload[at..at + 4].try_into().expect("4 bytes");
            *slot = f32::from_le_bytes(raw) as f64;
        }
        tensors.insert(name, arr);
    }
    Ok(Checkpoint {
        meta: header.meta,
        tensors,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(ckpt)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    checkpoint_from_bytes(&bytes)
}

/// The f32 round trip applied to an f64 array; saved-then-loaded tensors
/// compare equal to this.
pub fn quantize_f32(arr: &Array2<f64>) -> Array2<f64> {
    arr.mapv(|v| v as f32 as f64)
}
