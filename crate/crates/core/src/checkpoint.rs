//! Binary checkpoint container with a JSON sidecar.
//!
//! Layout (all integers little-endian `u32`): magic `GROKCKPT`, format
//! version, tensor count, then per tensor the name length, UTF-8 name, rank,
//! dims and raw little-endian `f32` data. The sidecar `<path>.json` stores
//! the model config and the vocabulary.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelConfig, ModelError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GROKCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error("{path}: malformed checkpoint: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: bad sidecar: {source}")]
    Sidecar { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: ModelConfig,
    pub vocab: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Model, CheckpointError> {
        Ok(Model::from_tensors(self.config, self.tensors)?)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn file_err(path: &Path) -> impl Fn(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::File { path: path.to_path_buf(), source }
}

pub fn encode(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("unexpected end of data")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor)>, String> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|e| e.to_string())?.to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let bytes = c.take(n.checked_mul(4).ok_or("tensor too large")?)?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        out.push((name, Tensor::new(&shape, data).map_err(|e| e.to_string())?));
    }
    if c.pos != buf.len() {
        return Err("trailing bytes".into());
    }
    Ok(out)
}

pub fn save(model: &Model, vocab: &[String], path: &Path) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    let tensors: Vec<(String, Tensor)> =
        model.parameters().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    let mut f = fs::File::create(path).map_err(file_err(path))?;
    f.write_all(&encode(&tensors)).map_err(file_err(path))?;
    let side = sidecar_path(path);
    let sidecar = Sidecar { config: model.config().clone(), vocab: vocab.to_vec() };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&side, json).map_err(file_err(&side))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(file_err(path))?;
    let tensors = decode(&buf).map_err(|reason| CheckpointError::Format { path: path.to_path_buf(), reason })?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(file_err(&side))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|source| CheckpointError::Sidecar { path: side, source })?;
    Ok(Checkpoint { config: sidecar.config, vocab: sidecar.vocab, tensors })
}
