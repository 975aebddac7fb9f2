//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `NHNETCKP` |
//! | 4 | format version (u32) |
//! | 8 | header length `n` (u64) |
//! | n | JSON header: kind, model config, extra config, entries |
//! | 8·k | parameter values as f64, entries back to back |
//! | 32 | SHA-256 of the value payload |
//!
//! Each entry records its name, shape and byte offset into the payload.

use std::path::Path;

use nhnet_core::transformer::ModelConfig;
use nhnet_core::{ParameterStore, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::io::{read_bytes, write_bytes};

pub const MAGIC: &[u8; 8] = b"NHNETCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    model: ModelConfig,
    config: serde_json::Value,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// What the parameters belong to, e.g. `nhnet`, `scorer` or `encoder`.
    pub kind: String,
    pub model: ModelConfig,
    /// Settings beyond the block shape, such as the attention variant.
    pub config: serde_json::Value,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, model: ModelConfig, config: serde_json::Value, params: ParameterStore) -> Self {
        Checkpoint {
            kind: kind.into(),
            model,
            config,
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.params.len());
        let mut payload = Vec::with_capacity(8 * self.params.param_count());
        for (name, t) in self.params.iter() {
            entries.push(Entry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            kind: self.kind.clone(),
            model: self.model,
            config: self.config.clone(),
            entries,
        };
        let header = serde_json::to_vec(&header).map_err(|e| CliError::data(e.to_string()))?;
        let mut out = Vec::with_capacity(52 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| CliError::data(format!("invalid checkpoint: {msg}"));
        if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(20))
            .filter(|&end| end + 32 <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..header_end]).map_err(|e| bad(&e.to_string()))?;
        let (payload, digest) = bytes[header_end..].split_at(bytes.len() - header_end - 32);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let mut params = ParameterStore::new();
        let mut expected = 0u64;
        for e in header.entries {
            if e.offset != expected {
                return Err(bad(&format!("entry {} at offset {}, expected {expected}", e.name, e.offset)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 8 * n;
            if end > payload.len() {
                return Err(bad(&format!("entry {} runs past the payload", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if params.contains(&e.name) {
                return Err(bad(&format!("duplicate entry {}", e.name)));
            }
            params.insert(e.name.clone(), Tensor::new(e.shape, data).map_err(|err| bad(&err.to_string()))?);
            expected = end as u64;
        }
        if expected as usize != payload.len() {
            return Err(bad("trailing payload bytes"));
        }
        Ok(Checkpoint {
            kind: header.kind,
            model: header.model,
            config: header.config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&read_bytes(path)?).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    /// Deserializes the extra config, checking the kind first.
    pub fn config_as<T: serde::de::DeserializeOwned>(&self, kind: &str) -> Result<T> {
        if self.kind != kind {
            return Err(CliError::data(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        serde_json::from_value(self.config.clone()).map_err(|e| CliError::data(format!("checkpoint config: {e}")))
    }
}
