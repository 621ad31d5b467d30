//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"METSCKPT"  u32 version  u32 header_len  header_len bytes of JSON
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 ndim, u64 dims[ndim], f32 values
//! ```
//!
//! The JSON header holds the encoder config and the text adapter. Tensors
//! cover every parameter and batch-norm buffer.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::{layout, Param};
use super::{EncoderConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::TextAdapter;

const MAGIC: &[u8; 8] = b"METSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    text_adapter: Option<TextAdapter>,
}

pub fn checkpoint_bytes(model: &ModelParams<f32>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        encoder: model.config().clone(),
        text_adapter: model.text_adapter().copied(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let tensors: Vec<(&String, &Tensor<f32>)> = model
        .params()
        .iter()
        .map(|(k, p)| (k, &p.value))
        .chain(model.buffers().iter())
        .collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &ModelParams<f32>, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses a checkpoint. Every tensor named by the config's layout must be
/// present with the right shape, and nothing else.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<ModelParams<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
    header.encoder.validate()?;

    let count = r.u32()? as usize;
    let mut found: IndexMap<String, Tensor<f32>> = IndexMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if found.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let expected = layout(&header.encoder);
    let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
        let t = found
            .shift_remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, config implies {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    };
    let mut params = IndexMap::new();
    for (name, kind, shape) in &expected.params {
        let value = take(name, shape)?;
        params.insert(name.clone(), Param { kind: *kind, value });
    }
    let mut buffers = IndexMap::new();
    for (name, c) in &expected.norms {
        for suffix in ["running_mean", "running_var"] {
            let key = format!("{name}.{suffix}");
            let t = take(&key, &[*c])?;
            buffers.insert(key, t);
        }
    }
    if let Some(extra) = found.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    Ok(ModelParams::from_parts(header.encoder, params, buffers, header.text_adapter))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e))?;
    parse_checkpoint(&bytes)
}

/// Loads a checkpoint and rejects it unless it was built from `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &EncoderConfig) -> Result<ModelParams<f32>> {
    let model = load_checkpoint(path)?;
    if model.config() != expected {
        return Err(Error::Checkpoint(format!(
            "config mismatch: checkpoint has {:?}, expected {:?}",
            model.config(),
            expected
        )));
    }
    Ok(model)
}
