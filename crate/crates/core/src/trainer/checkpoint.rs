//! Checkpoint layout, all little-endian:
//!
//! ```text
//! "KBCK" u32 version  u32 meta_len  meta (JSON)
//! u32 tensor_count
//! per tensor: u16 name_len  name  u8 dtype  u8 ndim  u32 dims[ndim]  data
//! ```
//!
//! `dtype` is 0 for f32 and 1 for f64; tensors are converted to the loading
//! precision on read.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::encoders::DomainBox;
use crate::error::{Error, Result};
use crate::real::{DType, Real};

use super::{MetricRow, Model, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"KBCK";

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Real> {
    pub config: TrainConfig,
    pub step: u64,
    pub history: Vec<MetricRow>,
    pub model: Model<T>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    step: u64,
    history: Vec<MetricRow>,
    domain: DomainBox,
    param_count: usize,
}

fn bad(message: impl Into<String>) -> Error {
    Error::Format { what: "checkpoint", message: message.into() }
}

pub fn checkpoint_bytes<T: Real>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let meta = Meta {
        config: ckpt.config.clone(),
        step: ckpt.step,
        history: ckpt.history.clone(),
        domain: ckpt.model.domain,
        param_count: ckpt.model.param_count(),
    };
    let meta = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    let params = &ckpt.model.params;
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        T::to_le_bytes_vec(t.data(), &mut out);
    }
    Ok(out)
}

pub fn save_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, checkpoint_bytes(ckpt)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn read_data<T: Real, S: Real>(bytes: &[u8]) -> Vec<T> {
    let w = std::mem::size_of::<S>();
    bytes.chunks_exact(w).map(|c| T::lit(S::from_le_chunk(c).as_f64())).collect()
}

pub fn checkpoint_from_bytes<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("missing KBCK header"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
    let mut model = Model::<T>::new(&meta.config, meta.domain)?;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::ConfigMismatch(vec![format!(
            "checkpoint holds {count} tensors, configuration expects {}",
            model.params.len()
        )]));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let n = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
        let dtype = DType::from_tag(r.take(1)?[0]).ok_or_else(|| bad(format!("{name}: unknown dtype")))?;
        let ndim = r.take(1)?[0] as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let width = match dtype {
            DType::F32 => 4,
            DType::F64 => 8,
        };
        let raw = r.take(len * width)?;
        let data = match dtype {
            DType::F32 => read_data::<T, f32>(raw),
            DType::F64 => read_data::<T, f64>(raw),
        };
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| Error::ConfigMismatch(vec![format!("unexpected tensor {name}")]))?;
        let slot = model.params.get_mut(id);
        if slot.shape() != shape.as_slice() {
            return Err(Error::ConfigMismatch(vec![format!(
                "{name}: checkpoint shape {shape:?}, configuration expects {:?}",
                slot.shape()
            )]));
        }
        *slot = Tensor::new(shape, data)?;
        seen[id.index()] = true;
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(bad(format!("tensor {} missing", model.params.names()[i])));
    }
    Ok(Checkpoint { config: meta.config, step: meta.step, history: meta.history, model })
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    checkpoint_from_bytes(&fs::read(path)?)
}
