//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MGAD" | u32 version = 1 | u32 tensor_count
//! per tensor: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | u8 dtype (0 = f32) | data
//! u32 metadata_len | metadata (UTF-8 JSON)
//! ```
//!
//! Parameters whose names end in `running_mean` / `running_var` are restored
//! as non-trainable. Optimizer moments are stored as `<param>.m` and
//! `<param>.v`, and the optimizer step count and hyperparameters go in the
//! metadata under `"adam"`.

use std::io::{Read, Write};
use std::path::Path;

use serde_json::{json, Value};
use thiserror::Error;

use super::{AdamConfig, AdamState, ParameterSet, Tensor};

pub const MAGIC: &[u8; 4] = b"MGAD";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?}, expected \"MGAD\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint at byte {offset}")]
    Truncated { offset: usize },
    #[error("unknown dtype tag {tag} at byte {offset}")]
    UnknownDtype { tag: u8, offset: usize },
    #[error("invalid tensor name at byte {offset}")]
    InvalidName { offset: usize },
    #[error("invalid tensor '{0}'")]
    InvalidTensor(String),
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("missing tensor '{0}'")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raw contents of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub metadata: Value,
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

impl Checkpoint {
    /// Packs parameters, optional optimizer moments, and metadata.
    pub fn from_parts(params: &ParameterSet, optimizer: Option<&AdamState>, metadata: Value) -> Self {
        let mut tensors: Vec<(String, Tensor)> = params.iter().map(|(n, p)| (n.to_string(), p.value.clone())).collect();
        let mut metadata = metadata;
        if let Some(opt) = optimizer {
            for (name, m, v) in opt.moments() {
                tensors.push((format!("{name}.m"), m.clone()));
                tensors.push((format!("{name}.v"), v.clone()));
            }
            let adam = json!({
                "step": opt.step_count(),
                "lr": opt.config.lr,
                "beta1": opt.config.beta1,
                "beta2": opt.config.beta2,
                "eps": opt.config.eps,
            });
            match metadata.as_object_mut() {
                Some(obj) => {
                    obj.insert("adam".into(), adam);
                }
                None => metadata = json!({ "adam": adam }),
            }
        }
        Self { tensors, metadata }
    }

    /// Splits the container back into a parameter set (the tensors not
    /// claimed as optimizer moments) and the optimizer state, if present.
    pub fn into_parts(self) -> Result<(ParameterSet, Option<AdamState>, Value), CheckpointError> {
        let adam_meta = self.metadata.get("adam").cloned();
        let mut params = ParameterSet::new();
        let mut moment_tensors = Vec::new();
        let names: std::collections::HashSet<String> = self.tensors.iter().map(|(n, _)| n.clone()).collect();
        for (name, t) in self.tensors {
            let base = name.strip_suffix(".m").or_else(|| name.strip_suffix(".v"));
            match (adam_meta.is_some(), base) {
                (true, Some(base)) if names.contains(base) => moment_tensors.push((name, t)),
                _ => {
                    let trainable = !is_running_stat(&name);
                    params
                        .insert(name.clone(), t, trainable)
                        .map_err(|_| CheckpointError::InvalidTensor(name))?;
                }
            }
        }
        let optimizer = match adam_meta {
            Some(meta) => {
                let cfg: AdamConfig = serde_json::from_value(meta.clone()).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
                let step = meta.get("step").and_then(Value::as_u64).unwrap_or(0);
                let mut by_name: std::collections::HashMap<String, Tensor> = moment_tensors.into_iter().collect();
                let mut moments = Vec::new();
                for (name, p) in params.iter().filter(|(_, p)| p.trainable) {
                    let m = by_name
                        .remove(&format!("{name}.m"))
                        .ok_or_else(|| CheckpointError::Missing(format!("{name}.m")))?;
                    let v = by_name
                        .remove(&format!("{name}.v"))
                        .ok_or_else(|| CheckpointError::Missing(format!("{name}.v")))?;
                    if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                        return Err(CheckpointError::InvalidTensor(name.to_string()));
                    }
                    moments.push((name.to_string(), m, v));
                }
                Some(AdamState::from_parts(cfg, step, moments))
            }
            None => None,
        };
        Ok((params, optimizer, self.metadata))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(DTYPE_F32);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = serde_json::to_vec(&self.metadata).expect("JSON values always serialize");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic { found: magic });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::InvalidName { offset: name_at })?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let tag_at = r.pos;
            let tag = r.u8()?;
            if tag != DTYPE_F32 {
                return Err(CheckpointError::UnknownDtype { tag, offset: tag_at });
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated { offset: r.pos })?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|_| CheckpointError::InvalidTensor(name.clone()))?;
            tensors.push((name, t));
        }
        let meta_len = r.u32()? as usize;
        let meta = r.take(meta_len)?;
        let metadata = serde_json::from_slice(meta).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        Ok(Self { tensors, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.encode())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }
}

/// Convenience wrapper over [`Checkpoint::from_parts`] + [`Checkpoint::save`].
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ParameterSet,
    optimizer: Option<&AdamState>,
    metadata: Value,
) -> Result<(), CheckpointError> {
    Checkpoint::from_parts(params, optimizer, metadata).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParameterSet, Option<AdamState>, Value), CheckpointError> {
    Checkpoint::load(path)?.into_parts()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated { offset: self.pos }),
        }
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
