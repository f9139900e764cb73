//! Checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "KFCK"                      magic, 4 bytes
//! version: u32 = 1
//! n_t: u32
//! tensor_count: u32
//! manifest, tensor_count entries:
//!     name_len: u32, name: UTF-8 bytes,
//!     role: u32 (0 weight, 1 beta, 2 gamma, 3 spline coef),
//!     rows: u64, cols: u64,
//!     offset: u64              byte offset into the data section
//! data_len: u64
//! data: raw f64 blocks
//! config_len: u64
//! config: UTF-8 `key = value` lines (model configuration, then `meta.*`)
//! ```

use super::{Model, ModelConfig, ModelError, ParamRole, ParameterSet};
use crate::autodiff::Tensor;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"KFCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic at offset 0: expected \"KFCK\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} at offset 4")]
    Version(u32),
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed checkpoint at offset {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A model plus free-form metadata (training K, seed, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta_usize(&self, key: &str) -> Option<usize> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.params();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.model.n_t() as u32).to_le_bytes());
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for p in params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&role_code(p.role).to_le_bytes());
            out.extend_from_slice(&(p.tensor.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(p.tensor.cols() as u64).to_le_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * p.tensor.len() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for p in params.iter() {
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut text = self.model.config().to_kv();
        for (k, v) in &self.meta {
            text.push_str(&format!("meta.{k} = {v}\n"));
        }
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let n_t = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.format(at, "parameter name is not UTF-8"))?
                .to_string();
            let at = r.pos;
            let role = role_from_code(r.u32()?).ok_or_else(|| r.format(at, "unknown role"))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let offset = r.u64()? as usize;
            manifest.push((name, role, rows, cols, offset));
        }
        let data_len = r.u64()? as usize;
        let data_start = r.pos;
        let data = r.take(data_len)?;
        let mut params = ParameterSet::default();
        for (name, role, rows, cols, offset) in manifest {
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| r.format(data_start, "tensor size overflows"))?;
            let end = offset
                .checked_add(len)
                .filter(|&e| e <= data_len)
                .ok_or_else(|| r.format(data_start + offset, &format!("block for {name} exceeds data")))?;
            let values = data[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let tensor = Tensor::from_vec(rows, cols, values).map_err(ModelError::from)?;
            params.push(name, role, tensor);
        }
        let text_len = r.u64()? as usize;
        let at = r.pos;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| r.format(at, "config section is not UTF-8"))?;
        if r.pos != bytes.len() {
            return Err(r.format(r.pos, "trailing bytes"));
        }
        let map = super::parse_kv(text)?;
        let mut meta = BTreeMap::new();
        let mut model_keys = BTreeMap::new();
        for (k, v) in map {
            match k.strip_prefix("meta.") {
                Some(m) => {
                    meta.insert(m.to_string(), v);
                }
                None => {
                    model_keys.insert(k, v);
                }
            }
        }
        let mut config = ModelConfig::default();
        let unknown = config.apply_kv(&model_keys)?;
        if let Some(k) = unknown.first() {
            return Err(r.format(at, &format!("unknown config key '{k}'")));
        }
        let model = Model::from_parts(config, n_t, params)?;
        Ok(Self { model, meta })
    }
}

fn role_code(role: ParamRole) -> u32 {
    match role {
        ParamRole::Weight => 0,
        ParamRole::Beta => 1,
        ParamRole::Gamma => 2,
        ParamRole::SplineCoef => 3,
    }
}

fn role_from_code(code: u32) -> Option<ParamRole> {
    Some(match code {
        0 => ParamRole::Weight,
        1 => ParamRole::Beta,
        2 => ParamRole::Gamma,
        3 => ParamRole::SplineCoef,
        _ => return None,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn format(&self, offset: usize, reason: &str) -> CheckpointError {
        CheckpointError::Format {
            offset,
            reason: reason.to_string(),
        }
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
