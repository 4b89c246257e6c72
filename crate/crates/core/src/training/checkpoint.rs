//! Binary checkpoint container.
//!
//! Layout: magic `CSRRCKPT`, `u32` format version, `u64` header length, a JSON
//! header, the raw little-endian `f64` arrays (parameters, then Adam first and
//! second moments, tensor by tensor in header order) and a trailing SHA-256 of
//! everything before it.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::AdamState;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSRRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub global_step: u64,
    pub best_valid_loss: Option<f64>,
    pub adam: AdamState,
}

impl TrainState {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            global_step: 0,
            best_valid_loss: None,
            adam: AdamState::new(store),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab_hash: String,
    pub store: ParamStore,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    vocab_hash: String,
    global_step: u64,
    /// Bit pattern, so the value survives the round trip exactly.
    best_valid_loss_bits: Option<u64>,
    adam_t: u64,
    tensors: Vec<TensorHeader>,
}

fn push_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.state.adam.matches(&self.store) {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            vocab_hash: self.vocab_hash.clone(),
            global_step: self.state.global_step,
            best_valid_loss_bits: self.state.best_valid_loss.map(f64::to_bits),
            adam_t: self.state.adam.t,
            tensors: self
                .store
                .tensors()
                .iter()
                .map(|t| TensorHeader {
                    name: t.name.clone(),
                    rows: t.rows,
                    cols: t.cols,
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut buf = Vec::with_capacity(64 + header.len() + 24 * self.store.num_values());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for t in self.store.tensors() {
            push_f64s(&mut buf, &t.values);
        }
        for m in &self.state.adam.m {
            push_f64s(&mut buf, m);
        }
        for v in &self.state.adam.v {
            push_f64s(&mut buf, v);
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Checkpoint("checkpoint file is truncated".into());
        if bytes.len() < 20 {
            return Err(truncated());
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(header_len).ok_or_else(truncated)?;
        if bytes.len() < header_end + 32 {
            return Err(truncated());
        }
        let header: Header =
            serde_json::from_slice(&bytes[20..header_end]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let total: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
        let body_end = header_end + 3 * 8 * total;
        if bytes.len() < body_end + 32 {
            return Err(truncated());
        }
        if bytes.len() > body_end + 32 {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }

        let mut pos = header_end;
        let mut take = |n: usize| -> Vec<f64> {
            let out = bytes[pos..pos + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos += 8 * n;
            out
        };
        let mut store = ParamStore::new();
        for t in &header.tensors {
            let values = take(t.rows * t.cols);
            store.add(t.name.clone(), t.rows, t.cols, values);
        }
        let m = header.tensors.iter().map(|t| take(t.rows * t.cols)).collect();
        let v = header.tensors.iter().map(|t| take(t.rows * t.cols)).collect();
        Ok(Self {
            model: header.model,
            train: header.train,
            vocab_hash: header.vocab_hash,
            store,
            state: TrainState {
                global_step: header.global_step,
                best_valid_loss: header.best_valid_loss_bits.map(f64::from_bits),
                adam: AdamState { t: header.adam_t, m, v },
            },
        })
    }

    /// Writes through a temporary file and renames, so a crash never leaves
    /// a half-written checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_bytes()?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
