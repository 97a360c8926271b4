//! Single-file checkpoint container.
//!
//! Layout: a UTF-8 JSON manifest, one NUL byte, then the raw little-endian
//! `f32` payloads of every tensor in manifest order. `byte_offset` is
//! relative to the first payload byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: usize,
    pub byte_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
    /// Free-form model description (architecture, vocabularies, run echo).
    #[serde(default)]
    pub metadata: Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub metadata: Value,
    pub params: ParamStore<f32>,
}

pub fn to_bytes(params: &ParamStore<f32>, metadata: &Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (_, name, t) in params.iter() {
        let byte_len = t.len() * 4;
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32".to_string(),
            byte_offset: offset,
            byte_len,
        });
        offset += byte_len;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tensors,
        metadata: metadata.clone(),
    };
    let mut out = serde_json::to_vec(&manifest)?;
    out.push(0);
    out.reserve(offset);
    for (_, _, t) in params.iter() {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let nul = bytes
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| AutodiffError::Checkpoint("missing NUL manifest terminator".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[..nul])?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    let payload = &bytes[nul + 1..];
    let mut expected_offset = 0;
    let mut params = ParamStore::new();
    for e in &manifest.tensors {
        if e.dtype != "f32" {
            return Err(AutodiffError::Checkpoint(format!(
                "`{}`: unsupported dtype {}",
                e.name, e.dtype
            )));
        }
        let n: usize = e.shape.iter().product();
        if e.byte_len != n * 4 {
            return Err(AutodiffError::Checkpoint(format!(
                "`{}`: byte_len {} does not match shape {:?}",
                e.name, e.byte_len, e.shape
            )));
        }
        if e.byte_offset != expected_offset {
            return Err(AutodiffError::Checkpoint(format!(
                "`{}`: byte_offset {} expected {}",
                e.name, e.byte_offset, expected_offset
            )));
        }
        let end = e.byte_offset + e.byte_len;
        if end > payload.len() {
            return Err(AutodiffError::Checkpoint(format!("`{}`: payload truncated", e.name)));
        }
        let data = payload[e.byte_offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(AutodiffError::Checkpoint(format!(
            "payload has {} bytes, manifest accounts for {}",
            payload.len(),
            expected_offset
        )));
    }
    Ok(Checkpoint {
        metadata: manifest.metadata,
        params,
    })
}

pub fn save(path: impl AsRef<Path>, params: &ParamStore<f32>, metadata: &Value) -> Result<()> {
    let bytes = to_bytes(params, metadata)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    from_bytes(&fs::read(path)?)
}
