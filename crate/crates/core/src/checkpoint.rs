//! UMAE checkpoint container: magic, version, a JSON metadata block, then
//! named f32 tensors. Parameters live on the f32 grid in memory, so a
//! save/load cycle is bitwise lossless.

use crate::model::ModelConfig;
use crate::params::ParamSet;
use crate::tensor::{Tensor, TensorError};
use crate::training::OptimState;
use crate::us1d::write_atomic;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"UMAE";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a UMAE checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("bad metadata: {0}")]
    BadMetadata(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateTensor(String),
    #[error("optimizer moments incomplete: missing {0}")]
    MissingMoment(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Metadata {
    pub model: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    /// AdamW step counter; 0 when no optimizer state is stored.
    #[serde(default)]
    pub optim_step: u64,
    /// Final logged metrics, e.g. val recon_mae or top1.
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: Metadata,
    pub params: ParamSet,
    pub optim: Option<OptimState>,
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(t.shape().len() as u8);
    for &e in t.shape() {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in t.to_f32_vec() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    let meta = serde_json::to_string(&ckpt.meta)
        .map_err(|e| CheckpointError::BadMetadata(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta.as_bytes());
    let n_opt = if ckpt.optim.is_some() { 2 * ckpt.params.len() } else { 0 };
    buf.extend_from_slice(&((ckpt.params.len() + n_opt) as u32).to_le_bytes());
    for (name, t) in ckpt.params.iter() {
        put_tensor(&mut buf, name, t);
    }
    if let Some(opt) = &ckpt.optim {
        for i in 0..ckpt.params.len() {
            put_tensor(&mut buf, &format!("opt.m.{}", ckpt.params.name(i)), &opt.m[i]);
        }
        for i in 0..ckpt.params.len() {
            put_tensor(&mut buf, &format!("opt.v.{}", ckpt.params.name(i)), &opt.v[i]);
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let meta_len = c.u32()? as usize;
    let meta_bytes = c.take(meta_len)?;
    let meta: Metadata = serde_json::from_slice(meta_bytes)
        .map_err(|e| CheckpointError::BadMetadata(e.to_string()))?;
    let tensor_count = c.u32()? as usize;

    let mut params = ParamSet::new();
    let mut moments: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..tensor_count {
        let name_len = c.u16()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|e| CheckpointError::BadMetadata(e.to_string()))?;
        let rank = c.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(4 * n)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_f32(shape, &data)?;
        if name.starts_with("opt.m.") || name.starts_with("opt.v.") {
            if moments.insert(name.clone(), tensor).is_some() {
                return Err(CheckpointError::DuplicateTensor(name));
            }
        } else {
            if params.get(&name).is_some() {
                return Err(CheckpointError::DuplicateTensor(name));
            }
            params.insert(&name, tensor);
        }
    }
    if c.pos != bytes.len() {
        return Err(CheckpointError::Truncated(c.pos));
    }

    let optim = if moments.is_empty() {
        None
    } else {
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let name = params.name(i);
            m.push(
                moments
                    .remove(&format!("opt.m.{name}"))
                    .ok_or_else(|| CheckpointError::MissingMoment(format!("opt.m.{name}")))?,
            );
            v.push(
                moments
                    .remove(&format!("opt.v.{name}"))
                    .ok_or_else(|| CheckpointError::MissingMoment(format!("opt.v.{name}")))?,
            );
        }
        let mut state = OptimState::new(&params);
        state.m = m;
        state.v = v;
        state.step = meta.optim_step;
        Some(state)
    };
    Ok(Checkpoint { meta, params, optim })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = encode(ckpt)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
