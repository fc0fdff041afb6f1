//! Versioned JSON parameter checkpoints.
//!
//! Layout (version 1):
//!
//! ```json
//! {
//!   "format": "costate-checkpoint",
//!   "version": 1,
//!   "kind": "lstm-encoder",
//!   "config": { ... },
//!   "tensors": [{"name": "lstm.weight", "shape": [128, 38], "data": [...]}, ...],
//!   "checksum": "<sha256 hex>"
//! }
//! ```
//!
//! Values are written with shortest round-trip formatting, so a save/load
//! cycle is lossless. The checksum is SHA-256 over, for each tensor in order,
//! the UTF-8 name, a zero byte, both shape entries as little-endian `u64`,
//! and the little-endian bytes of every value.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Parameters, Tensor};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CHECKPOINT_FORMAT: &str = "costate-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
    pub checksum: String,
}

impl Checkpoint {
    pub fn from_params(kind: &str, config: serde_json::Value, params: &impl Parameters) -> Self {
        let tensors: Vec<NamedTensor> = params
            .named_params()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape(),
                data: t.value().data().to_vec(),
            })
            .collect();
        let checksum = checksum(&tensors);
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            config,
            tensors,
            checksum,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Parses and validates a checkpoint: format tag, version, per-tensor
    /// shape headers and checksum.
    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format tag {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        for t in &ck.tensors {
            if t.shape[0] * t.shape[1] != t.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape header {:?} but {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
        }
        let actual = checksum(&ck.tensors);
        if actual != ck.checksum {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {}, computed {actual}",
                ck.checksum
            )));
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Copies the stored values into `params`, which must have exactly the
    /// same names and shapes.
    pub fn restore_into(&self, params: &mut impl Parameters) -> Result<()> {
        let mut targets = params.named_params_mut();
        if targets.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, checkpoint has {}",
                targets.len(),
                self.tensors.len()
            )));
        }
        for ((name, target), stored) in targets.iter_mut().zip(&self.tensors) {
            if *name != stored.name || target.shape() != stored.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: expected {name} {:?}, found {} {:?}",
                    target.shape(),
                    stored.name,
                    stored.shape
                )));
            }
            let requires_grad = target.requires_grad();
            **target = Tensor::new(Matrix::new(stored.shape[0], stored.shape[1], stored.data.clone())?);
            target.set_requires_grad(requires_grad);
        }
        Ok(())
    }
}

fn checksum(tensors: &[NamedTensor]) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        h.update(t.name.as_bytes());
        h.update([0u8]);
        h.update((t.shape[0] as u64).to_le_bytes());
        h.update((t.shape[1] as u64).to_le_bytes());
        for v in &t.data {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}
