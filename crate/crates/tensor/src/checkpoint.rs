//! Checkpoint container.
//!
//! Layout: one line of JSON manifest terminated by `\n`, then the raw
//! little-endian `f32` payload. The manifest lists every tensor with its
//! shape and byte offset into the payload, plus a SHA-256 of the payload
//! and free-form metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{ParamStore, Result, Tensor, TensorError};

pub const FORMAT: &str = "patclass-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: usize,
    pub sha256: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub meta: serde_json::Value,
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore<f32>, meta: serde_json::Value) -> Self {
        Self {
            tensors: store
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
            meta,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: payload.len(),
            });
            for x in t.data() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT.to_string(),
            tensors: entries,
            payload_bytes: payload.len(),
            sha256: digest(&payload),
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&manifest)?;
        out.push(b'\n');
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parses and validates a checkpoint. Never panics on malformed input.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| TensorError::Checkpoint("missing manifest terminator".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..split])?;
        if manifest.format != FORMAT {
            return Err(TensorError::Checkpoint(format!(
                "unsupported format `{}`",
                manifest.format
            )));
        }
        let payload = &bytes[split + 1..];
        if payload.len() != manifest.payload_bytes {
            return Err(TensorError::Checkpoint(format!(
                "payload is {} bytes, manifest declares {}",
                payload.len(),
                manifest.payload_bytes
            )));
        }
        let found = digest(payload);
        if found != manifest.sha256 {
            return Err(TensorError::Corrupt {
                expected: manifest.sha256,
                found,
            });
        }
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let n = e
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| TensorError::Checkpoint(format!("tensor `{}` too large", e.name)))?;
            let end = e
                .offset
                .checked_add(n)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| {
                    TensorError::Checkpoint(format!("tensor `{}` exceeds payload", e.name))
                })?;
            let data = payload[e.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((e.name, Tensor::new(e.shape, data)?));
        }
        Ok(Self {
            tensors,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// Copies tensors into a store built for the same model layout.
    ///
    /// The store's parameter set must match exactly: missing tensors are
    /// listed together, and the first shape disagreement is reported.
    pub fn load_into(&self, store: &mut ParamStore<f32>) -> Result<()> {
        let missing: Vec<&str> = store
            .names()
            .filter(|n| !self.tensors.iter().any(|(m, _)| m == n))
            .collect();
        if !missing.is_empty() {
            return Err(TensorError::Checkpoint(format!(
                "missing tensors: {}",
                missing.join(", ")
            )));
        }
        let extra: Vec<&str> = self
            .tensors
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(|n| store.by_name(n).is_none())
            .collect();
        if !extra.is_empty() {
            return Err(TensorError::Checkpoint(format!(
                "unexpected tensors: {}",
                extra.join(", ")
            )));
        }
        for (name, t) in &self.tensors {
            let id = store.id(name)?;
            let want = store.value(id).shape();
            if want != t.shape() {
                return Err(TensorError::Checkpoint(format!(
                    "shape mismatch for `{name}`: checkpoint {:?}, model {:?}",
                    t.shape(),
                    want
                )));
            }
        }
        for (name, t) in &self.tensors {
            let id = store.id(name)?;
            store.get_mut(id).value = t.clone();
        }
        Ok(())
    }
}
