//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DNET"                      4-byte magic
//! version: u32                currently 1
//! config_len: u32, config     model configuration as JSON
//! meta_len: u32, meta         run metadata as JSON
//! count: u32                  number of stored tensors
//! per tensor:
//!   name_len: u32, name       utf-8
//!   rank: u8, dims: u32 * rank
//!   data: f32 * product(dims)
//! ```
//!
//! Weights are stored under their parameter names; optimizer moments, when
//! present, under `adam.m.<name>` / `adam.v.<name>`.  Loading rebuilds the
//! parameter layout from the stored configuration and fills it by name, so a
//! round trip restores every weight bit for bit.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AdamState, Tensor};

use super::{Model, ModelConfig};

const MAGIC: &[u8; 4] = b"DNET";
const VERSION: u32 = 1;

/// Run metadata carried alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CkptMeta {
    /// Seed the weights were initialised from.
    pub init_seed: u64,
    /// Epochs completed when the checkpoint was written.
    pub epoch: u64,
    /// Optimizer step counter (0 when no optimizer state is stored).
    pub adam_step: u64,
    /// Free-form note (best accuracy so far, data description, ...).
    pub note: String,
}

/// Everything a checkpoint restores.
pub struct Checkpoint {
    pub model: Model,
    pub adam: Option<AdamState>,
    pub meta: CkptMeta,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path.display().to_string(), e)
}

fn write_u32(w: &mut impl Write, path: &Path, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))
}

fn write_bytes(w: &mut impl Write, path: &Path, b: &[u8]) -> Result<()> {
    write_u32(w, path, b.len() as u32)?;
    w.write_all(b).map_err(|e| io_err(path, e))
}

fn write_tensor(w: &mut impl Write, path: &Path, name: &str, t: &Tensor) -> Result<()> {
    write_bytes(w, path, name.as_bytes())?;
    let shape = t.shape();
    w.write_all(&[shape.len() as u8]).map_err(|e| io_err(path, e))?;
    for &d in shape {
        write_u32(w, path, d as u32)?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| io_err(path, e))
}

/// Writes the model (and optionally its optimizer state) to `path`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    adam: Option<&AdamState>,
    meta: &CkptMeta,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(|e| io_err(path, e))?;
    write_u32(&mut w, path, VERSION)?;
    let config =
        serde_json::to_vec(model.config()).map_err(|e| Error::Config(e.to_string()))?;
    write_bytes(&mut w, path, &config)?;
    let meta_json = serde_json::to_vec(meta).map_err(|e| Error::Config(e.to_string()))?;
    write_bytes(&mut w, path, &meta_json)?;

    let params = model.params();
    let count = params.len() + adam.map_or(0, |_| 2 * params.len());
    write_u32(&mut w, path, count as u32)?;
    for p in params.iter() {
        write_tensor(&mut w, path, &p.name, &p.value)?;
    }
    if let Some(adam) = adam {
        let (m, v) = adam.moments();
        for (p, (pm, pv)) in params.iter().zip(m.iter().zip(v.iter())) {
            let shape = p.value.shape().to_vec();
            write_tensor(&mut w, path, &format!("adam.m.{}", p.name), &Tensor::new(shape.clone(), pm.clone())?)?;
            write_tensor(&mut w, path, &format!("adam.v.{}", p.name), &Tensor::new(shape, pv.clone())?)?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    r: BufReader<File>,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn truncated(&self, detail: impl Into<String>) -> Error {
        Error::CkptTruncated { path: self.path.display().to_string(), detail: detail.into() }
    }

    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.r.read_exact(buf).map_err(|_| self.truncated(format!("while reading {what}")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn bytes(&mut self, what: &str, cap: u32) -> Result<Vec<u8>> {
        let len = self.u32(what)?;
        if len > cap {
            return Err(self.truncated(format!("{what} declares {len} bytes (cap {cap})")));
        }
        let mut buf = vec![0u8; len as usize];
        self.exact(&mut buf, what)?;
        Ok(buf)
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name_bytes = self.bytes("tensor name", 4096)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| self.truncated("tensor name is not utf-8"))?;
        let mut rank = [0u8; 1];
        self.exact(&mut rank, "tensor rank")?;
        if rank[0] == 0 || rank[0] > 8 {
            return Err(self.truncated(format!("tensor '{name}' has rank {}", rank[0])));
        }
        let mut shape = Vec::with_capacity(rank[0] as usize);
        let mut len = 1usize;
        for _ in 0..rank[0] {
            let d = self.u32("tensor dim")? as usize;
            len = len.saturating_mul(d);
            shape.push(d);
        }
        if len > 256 << 20 {
            return Err(self.truncated(format!("tensor '{name}' declares {len} elements")));
        }
        let mut buf = vec![0u8; len * 4];
        self.exact(&mut buf, "tensor data")?;
        let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

/// Reads a checkpoint back; optimizer state is restored when stored.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader { r: BufReader::new(file), path };

    let mut magic = [0u8; 4];
    r.exact(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::CkptMagic { path: path.display().to_string() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::CkptVersion { path: path.display().to_string(), version });
    }
    let config_bytes = r.bytes("config", 1 << 20)?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes)
        .map_err(|e| Error::Config(format!("stored configuration: {e}")))?;
    let meta_bytes = r.bytes("metadata", 1 << 20)?;
    let meta: CkptMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Config(format!("stored metadata: {e}")))?;

    let count = r.u32("tensor count")?;
    let mut stored: HashMap<String, Tensor> = HashMap::with_capacity(count as usize);
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        if stored.insert(name.clone(), t).is_some() {
            return Err(Error::CkptTensor {
                path: path.display().to_string(),
                detail: format!("duplicate tensor '{name}'"),
            });
        }
    }

    // Rebuild the expected layout from the configuration, then fill by name.
    let mut model = Model::new(config, meta.init_seed)?;
    let tensor_err = |detail: String| Error::CkptTensor { path: path.display().to_string(), detail };
    let mut used = 0usize;
    for slot in 0..model.params().len() {
        let name = model.params().get(slot).name.clone();
        let expect = model.params().get(slot).value.shape().to_vec();
        let t = stored
            .get(&name)
            .ok_or_else(|| tensor_err(format!("missing parameter '{name}'")))?;
        if t.shape() != expect.as_slice() {
            return Err(tensor_err(format!(
                "parameter '{name}' has shape {:?}, expected {:?}",
                t.shape(),
                expect
            )));
        }
        model.params_mut().get_mut(slot).value = t.clone();
        used += 1;
    }

    let has_moments = stored.keys().any(|k| k.starts_with("adam."));
    let adam = if has_moments {
        let mut m = Vec::with_capacity(model.params().len());
        let mut v = Vec::with_capacity(model.params().len());
        for p in model.params().iter() {
            for (prefix, dest) in [("adam.m.", &mut m), ("adam.v.", &mut v)] {
                let key = format!("{prefix}{}", p.name);
                let t = stored
                    .get(&key)
                    .ok_or_else(|| tensor_err(format!("missing optimizer tensor '{key}'")))?;
                if t.len() != p.value.len() {
                    return Err(tensor_err(format!(
                        "optimizer tensor '{key}' has {} elements, expected {}",
                        t.len(),
                        p.value.len()
                    )));
                }
                dest.push(t.data().to_vec());
                used += 1;
            }
        }
        Some(AdamState::from_parts(model.params(), meta.adam_step, m, v)?)
    } else {
        None
    };

    if used != stored.len() {
        return Err(tensor_err(format!(
            "file stores {} tensors, configuration expects {used}",
            stored.len()
        )));
    }
    Ok(Checkpoint { model, adam, meta })
}

// ── tests ─────────────────────────────────────────────────────────────────
