//! `HCK1` checkpoint container, little-endian:
//!
//! ```text
//! magic "HCK1" | version u16 | config_len u32 | config JSON (UTF-8)
//! tensor_count u32 | per tensor: name_len u32, name, rank u32, dims u32 x rank, values f32 x prod(dims)
//! ```

use super::config::{Architecture, ConfigError, ModelConfig};
use super::params::ModelParams;
use super::tensor::Tensor;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const HCK1_MAGIC: &[u8; 4] = b"HCK1";
pub const HCK1_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an HCK1 checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("config block is not valid UTF-8 JSON: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("duplicate tensor {0}")]
    DuplicateName(String),
    #[error("{0} bytes after the last tensor")]
    TrailingBytes(usize),
}

impl CheckpointError {
    pub fn is_shape_mismatch(&self) -> bool {
        matches!(self, CheckpointError::Config(ConfigError::ShapeMismatch { .. }))
    }
}

pub fn encode_checkpoint(params: &ModelParams<f32>, config: &ModelConfig) -> Vec<u8> {
    let cfg = serde_json::to_vec_pretty(config).expect("config serializes");
    let mut out = Vec::with_capacity(64 + cfg.len() + params.count() * 4);
    out.extend_from_slice(HCK1_MAGIC);
    out.extend_from_slice(&HCK1_VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(params.iter().count() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses and validates a checkpoint against the architecture its own config describes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams<f32>, ModelConfig), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != HCK1_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
    if version != HCK1_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_bytes = r.take(cfg_len, "config")?;
    let config: ModelConfig =
        serde_json::from_slice(cfg_bytes).map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    let arch = Architecture::new(&config)?;

    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?).map_err(|_| CheckpointError::BadName)?.to_string();
        let rank = r.u32("rank")? as usize;
        // rank is bounded by the remaining bytes before allocating
        if rank > (bytes.len() - r.pos) / 4 {
            return Err(CheckpointError::Truncated("dims"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(CheckpointError::Truncated("values"))?;
        let raw = r.take(n, "values")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let tensor = Tensor::from_vec(&shape, data).expect("length matches shape");
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(CheckpointError::DuplicateName(name));
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    let params = ModelParams::from_tensors(tensors);
    params.check(&arch)?;
    Ok((params, config))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams<f32>, config: &ModelConfig) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(params, config))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f32>, ModelConfig), CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}
