//! Checkpoint container.
//!
//! Layout: the 8-byte magic `LUSOCKPT`, a little-endian `u64` header length,
//! a JSON header, then the tensor payload as little-endian `f32` values.
//! The header carries the format version, the encoder configuration, free
//! string metadata and a directory of `{name, shape, offset, length}`
//! entries whose byte offsets are relative to the payload start. Tensors
//! are stored in name order, so identical parameters always produce
//! identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};

use super::{EncoderConfig, EncoderError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LUSOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: EncoderConfig,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

/// Encoder configuration plus named weights (and optional task-head
/// tensors and metadata).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub metadata: BTreeMap<String, String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(config: EncoderConfig, params: ParamStore) -> Self {
        Self {
            config,
            metadata: BTreeMap::new(),
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, EncoderError> {
        let mut named: Vec<(&str, &Tensor)> = self.params.iter().map(|(_, n, t)| (n, t)).collect();
        named.sort_by(|a, b| a.0.cmp(b.0));
        let mut offset = 0u64;
        let tensors = named
            .iter()
            .map(|(name, t)| {
                let length = (t.len() * 4) as u64;
                let e = TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                    length,
                };
                offset += length;
                e
            })
            .collect();
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            metadata: self.metadata.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in named {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncoderError> {
        let corrupt = |m: &str| EncoderError::CorruptCheckpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing magic bytes"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..payload_start])?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(EncoderError::UnsupportedCheckpointVersion(header.format_version));
        }
        let payload = &bytes[payload_start..];
        let mut params = ParamStore::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if e.length != (n * 4) as u64 {
                return Err(corrupt(&format!("tensor `{}` length disagrees with its shape", e.name)));
            }
            let start = e.offset as usize;
            let raw = payload
                .get(start..start + e.length as usize)
                .ok_or_else(|| corrupt(&format!("tensor `{}` extends past the payload", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
        }
        Ok(Self {
            config: header.config,
            metadata: header.metadata,
            params,
        })
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
