//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "FERC"
//! version    u32
//! dtype      u8       0 = f32, 1 = f64 (every record uses it)
//! config     u32 length + UTF-8 TOML of the model config
//! extras     u32 length + UTF-8 TOML: epoch, best_val_acc, optimizer
//!                     scalars, scheduler state
//! count      u32
//! records    count × { u32 name length, name, u8 dtype, u32 rank,
//!                      u64 × rank extents, raw IEEE-754 payload }
//! ```
//!
//! Record names are prefixed `param:`, `buffer:` or `optim:<slot>/`.
//! Trailing bytes after the last record are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamMap, VggConfig, VggModel};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerMeta};
use crate::sched::Scheduler;
use crate::tensor::{DType, Real, SeededRng, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FERC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: VggConfig,
    pub params: ParamMap<T>,
    pub buffers: ParamMap<T>,
    pub optimizer: Option<Optimizer<T>>,
    pub scheduler: Option<Scheduler>,
    pub epoch: u64,
    pub best_val_acc: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Extras {
    epoch: u64,
    best_val_acc: f64,
    optimizer: Option<OptimizerMeta>,
    scheduler: Option<Scheduler>,
}

impl<T: Real> Checkpoint<T> {
    pub fn from_model(model: &VggModel<T>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            params: model.param_map(),
            buffers: model.buffer_map(),
            optimizer: None,
            scheduler: None,
            epoch: 0,
            best_val_acc: 0.0,
        }
    }

    /// Copy the stored parameters and buffers into `model`.
    pub fn restore_into(&self, model: &mut VggModel<T>) -> Result<()> {
        model.load_state(&self.params, &self.buffers)
    }

    pub fn to_model(&self) -> Result<VggModel<T>> {
        let mut model = VggModel::build(&self.config, &mut SeededRng::new(0))?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::DTYPE as u8);

        let config = toml::to_string(&self.config)
            .map_err(|e| Error::Checkpoint(format!("cannot encode config: {e}")))?;
        let (optim_meta, optim_tensors) = match &self.optimizer {
            Some(o) => {
                let (m, t) = o.to_parts();
                (Some(m), t)
            }
            None => (None, Vec::new()),
        };
        let extras = toml::to_string(&Extras {
            epoch: self.epoch,
            best_val_acc: self.best_val_acc,
            optimizer: optim_meta,
            scheduler: self.scheduler.clone(),
        })
        .map_err(|e| Error::Checkpoint(format!("cannot encode extras: {e}")))?;
        for block in [config, extras] {
            out.extend_from_slice(&(block.len() as u32).to_le_bytes());
            out.extend_from_slice(block.as_bytes());
        }

        let records: Vec<(String, &Tensor<T>)> = self
            .params
            .iter()
            .map(|(k, v)| (format!("param:{k}"), v))
            .chain(self.buffers.iter().map(|(k, v)| (format!("buffer:{k}"), v)))
            .chain(optim_tensors.iter().map(|(k, v)| (format!("optim:{k}"), v)))
            .collect();
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE as u8);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let header = read_header(&mut r)?;
        if header.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint stores {:?} tensors, {:?} requested",
                header.dtype,
                T::DTYPE
            )));
        }
        let extras: Extras = toml::from_str(&r.string()?)
            .map_err(|e| Error::Checkpoint(format!("bad extras block: {e}")))?;

        let count = r.u32()? as usize;
        let mut params = ParamMap::new();
        let mut buffers = ParamMap::new();
        let mut optim = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let dtype = DType::from_byte(r.u8()?)
                .ok_or_else(|| Error::Checkpoint(format!("record {name}: unknown dtype")))?;
            if dtype != T::DTYPE {
                return Err(Error::Checkpoint(format!(
                    "record {name}: dtype differs from header"
                )));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("record {name}: extent overflow")))?;
            let payload = r.take(len.checked_mul(dtype.size()).ok_or_else(|| {
                Error::Checkpoint(format!("record {name}: payload size overflow"))
            })?)?;
            let data = payload.chunks_exact(dtype.size()).map(T::read_le).collect();
            let tensor = Tensor::from_vec(&shape, data)
                .map_err(|e| Error::Checkpoint(format!("record {name}: {e}")))?;
            if let Some(k) = name.strip_prefix("param:") {
                params.insert(k.to_string(), tensor);
            } else if let Some(k) = name.strip_prefix("buffer:") {
                buffers.insert(k.to_string(), tensor);
            } else if let Some(k) = name.strip_prefix("optim:") {
                optim.push((k.to_string(), tensor));
            } else {
                return Err(Error::Checkpoint(format!("unknown record {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last record",
                bytes.len() - r.pos
            )));
        }

        let optimizer = match extras.optimizer {
            Some(meta) => Some(Optimizer::from_parts(meta, optim)?),
            None if optim.is_empty() => None,
            None => {
                return Err(Error::Checkpoint(
                    "optimizer buffers without optimizer state".into(),
                ))
            }
        };
        Ok(Checkpoint {
            config: header.config,
            params,
            buffers,
            optimizer,
            scheduler: extras.scheduler,
            epoch: extras.epoch,
            best_val_acc: extras.best_val_acc,
        })
    }

    /// Write atomically: the file at `path` is either the previous complete
    /// checkpoint or the new one.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.partial");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Precision and model config of a checkpoint, without decoding tensors.
pub fn peek(path: &Path) -> Result<(DType, VggConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let h = read_header(&mut Reader {
        bytes: &bytes,
        pos: 0,
    })?;
    Ok((h.dtype, h.config))
}

struct Header {
    dtype: DType,
    config: VggConfig,
}

fn read_header(r: &mut Reader<'_>) -> Result<Header> {
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(
            "bad magic bytes, not a checkpoint".into(),
        ));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let dtype =
        DType::from_byte(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown dtype byte".into()))?;
    let config: VggConfig = toml::from_str(&r.string()?)
        .map_err(|e| Error::Checkpoint(format!("bad config block: {e}")))?;
    Ok(Header { dtype, config })
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
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated file: needed {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
}
