//! `UCMC` checkpoints: magic, format version, length-prefixed JSON model
//! config, then one named section per weight tensor.

use std::path::Path;

use ucm_core::diffusion::{Dit, ModelConfig};
use ucm_core::nn::{ParamEntry, ParamStore};

use crate::formats::{read_bytes, write_bytes, IoError};

pub const MAGIC: &[u8; 4] = b"UCMC";
pub const VERSION: u32 = 1;

pub fn encode(model: &Dit<f32>) -> Result<Vec<u8>, serde_json::Error> {
    let cfg = serde_json::to_vec(&model.config)?;
    let mut out = Vec::with_capacity(64 + cfg.len() + 4 * model.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params.entries.len() as u32).to_le_bytes());
    for e in &model.params.entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &model.params.data[e.range()] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<usize> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?) as usize)
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Dit<f32>, IoError> {
    let bad = |m: &str| IoError::format(path, m.to_string());
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4) != Some(MAGIC.as_slice()) {
        return Err(bad("missing UCMC header"));
    }
    let version = c.u32().ok_or_else(|| bad("truncated header"))?;
    if version != VERSION as usize {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let n = c.u32().ok_or_else(|| bad("truncated header"))?;
    let cfg_bytes = c.take(n).ok_or_else(|| bad("truncated config"))?;
    let config: ModelConfig = serde_json::from_slice(cfg_bytes).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let sections = c.u32().ok_or_else(|| bad("truncated section count"))?;
    let mut store = ParamStore::<f32>::default();
    for _ in 0..sections {
        let trunc = || bad("truncated weight section");
        let len = c.u32().ok_or_else(trunc)?;
        let name = std::str::from_utf8(c.take(len).ok_or_else(trunc)?)
            .map_err(|_| bad("section name is not utf-8"))?
            .to_string();
        let rank = c.u32().ok_or_else(trunc)?;
        let shape = (0..rank).map(|_| c.u32().ok_or_else(trunc)).collect::<Result<Vec<_>, _>>()?;
        let entry = ParamEntry {
            name,
            shape,
            offset: store.data.len(),
        };
        let payload = c.take(4 * entry.len()).ok_or_else(trunc)?;
        store
            .data
            .extend(payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))));
        store.entries.push(entry);
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes after the last section"));
    }
    Dit::from_params(config, store).map_err(|e| IoError::format(path, e.to_string()))
}

pub fn save(path: &Path, model: &Dit<f32>) -> Result<(), IoError> {
    let bytes = encode(model).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_bytes(path, &bytes)
}

pub fn load(path: &Path) -> Result<Dit<f32>, IoError> {
    decode(path, &read_bytes(path)?)
}
