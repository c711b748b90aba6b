//! Flat parameter archive.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "CSLUCKP1"
//! meta_len     u64
//! meta         meta_len bytes of UTF-8 JSON (CheckpointMeta)
//! count        u64
//! count × entry:
//!   name_len   u32
//!   name       name_len bytes UTF-8 (parameter path)
//!   rank       u32 (always 2)
//!   rows, cols u64, u64
//!   data       rows·cols × f64 LE
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::Shape;
use super::params::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CSLUCKP1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub step: u64,
    pub seed: u64,
    /// Free-form model description needed to rebuild the architecture.
    pub config: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(config: serde_json::Value, step: u64, seed: u64) -> Self {
        CheckpointMeta {
            config_hash: config_hash(&config),
            step,
            seed,
            config,
        }
    }
}

/// SHA-256 of the canonical JSON rendering, hex encoded.
pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).unwrap_or_default();
    hex::encode(Sha256::digest(&bytes))
}

pub fn encode(meta: &CheckpointMeta, params: &ParamStore) -> Result<Vec<u8>> {
    let meta_bytes =
        serde_json::to_vec(meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let mut out = Vec::with_capacity(params.num_scalars() * 8 + 1024);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (_, p) in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(p.shape.rows as u64).to_le_bytes());
        out.extend_from_slice(&(p.shape.cols as u64).to_le_bytes());
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated archive: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointMeta, ParamStore)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let meta_len = r.u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let count = r.u64()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("parameter name: {e}")))?
            .to_string();
        let rank = r.u32()?;
        if rank != 2 {
            return Err(Error::Checkpoint(format!("{name}: unsupported rank {rank}")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(&name, Shape::new(rows, cols), data)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last entry",
            bytes.len() - r.pos
        )));
    }
    Ok((meta, store))
}

pub fn save(path: &Path, meta: &CheckpointMeta, params: &ParamStore) -> Result<()> {
    fs::write(path, encode(meta, params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(CheckpointMeta, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
