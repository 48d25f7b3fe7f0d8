//! Binary checkpoint format.
//!
//! ```text
//! "RMOE" | version u16 LE | config digest [32]
//! repeated until EOF:
//!   name_len u16 LE | name UTF-8 | rows u32 LE | cols u32 LE | rows*cols f32 LE
//! ```
//!
//! Tensors are written in name order. Vocabularies and the resume store go
//! to a JSON sidecar at `<path>.vocab.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::features::{TextProviders, Vocabularies};
use super::model::{Architecture, RankModel};
use super::ModelError;
use crate::autodiff::{ModelParams, Tensor};
use crate::config::{hex, ModelConfig};

pub const MAGIC: &[u8; 4] = b"RMOE";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    Version { found: u16 },
    #[error("config digest mismatch: checkpoint {found}, config {expected}")]
    Digest { expected: String, found: String },
    #[error("checkpoint truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("tensor name is not UTF-8 at byte {offset}")]
    BadName { offset: usize },
    #[error("duplicate tensor `{0}`")]
    Duplicate(String),
    #[error("sidecar {path}: {reason}")]
    Sidecar { path: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    vocab: Vocabularies,
    resumes: BTreeMap<String, String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".vocab.json");
    PathBuf::from(s)
}

pub fn encode_params(params: &ModelParams<f32>, digest: &[u8; 32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(38 + params.count() * 4 + params.len() * 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(digest);
    for (name, t) in params.iter() {
        let name_len = u16::try_from(name.len()).expect("tensor names are short");
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated { offset: self.bytes.len() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses checkpoint bytes, requiring the stored digest to equal `expected`.
pub fn decode_params(bytes: &[u8], expected: &[u8; 32]) -> Result<ModelParams<f32>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let digest = r.take(32)?;
    if digest != expected {
        return Err(CheckpointError::Digest {
            expected: hex(expected),
            found: hex(digest),
        });
    }
    let mut params = ModelParams::new();
    while r.pos < bytes.len() {
        let start = r.pos;
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::BadName { offset: start })?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows.checked_mul(cols).ok_or(CheckpointError::Truncated { offset: start })?;
        let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated { offset: start })?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(rows, cols, data).expect("length checked");
        if params.contains(&name) {
            return Err(CheckpointError::Duplicate(name));
        }
        params.insert(name, t).expect("not duplicate");
    }
    Ok(params)
}

pub fn save(model: &RankModel, path: &Path) -> Result<(), CheckpointError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| CheckpointError::Io { path, source }
    };
    let bytes = encode_params(model.params(), &model.config().digest());
    std::fs::write(path, bytes).map_err(io(path))?;
    let side = sidecar_path(path);
    let body = Sidecar {
        vocab: model.vocab().clone(),
        resumes: model.resumes().clone(),
    };
    let json = serde_json::to_vec(&body).map_err(|e| CheckpointError::Sidecar {
        path: side.display().to_string(),
        reason: e.to_string(),
    })?;
    std::fs::write(&side, json).map_err(io(&side))
}

pub fn load(path: &Path, config: &ModelConfig, providers: TextProviders) -> Result<RankModel, CheckpointError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| CheckpointError::Io { path, source }
    };
    let bytes = std::fs::read(path).map_err(io(path))?;
    let params = decode_params(&bytes, &config.digest())?;
    let side = sidecar_path(path);
    let text = std::fs::read(&side).map_err(io(&side))?;
    let body: Sidecar = serde_json::from_slice(&text).map_err(|e| CheckpointError::Sidecar {
        path: side.display().to_string(),
        reason: e.to_string(),
    })?;
    let arch = Architecture::new(config)?;
    Ok(RankModel::from_parts(arch, params, body.vocab, body.resumes, providers)?)
}
