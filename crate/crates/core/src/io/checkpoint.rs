//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! "MGCK" | u32 version | u32 header_len | header JSON
//! u32 n_params | n_params x (u32 name_len | name | u64 count | count x f32)
//! u32 n_state  | n_state  x (u32 name_len | name | u64 count | count x f64)
//! ```
//!
//! Parameters are quantized to f32 on save; optimizer state keeps f64 so a
//! resumed run continues bit-for-bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::losses::LossConfig;
use crate::model::{ArchitectureDescriptor, Model};
use crate::rng::GENERATOR;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: ArchitectureDescriptor,
    pub loss: LossConfig,
    pub seed: u64,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedBlob {
    pub name: String,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<NamedBlob>,
    pub state: Vec<NamedBlob>,
}

impl Checkpoint {
    /// Captures a model's parameters, quantized to f32 precision so that the
    /// in-memory checkpoint equals what a reload would produce.
    pub fn from_model(
        model: &Model,
        loss: LossConfig,
        seed: u64,
        step: u64,
        state: Vec<NamedBlob>,
    ) -> Self {
        let store = model.params();
        let params = store
            .names()
            .iter()
            .zip(store.tensors())
            .map(|(name, t)| NamedBlob {
                name: name.clone(),
                data: t.data().iter().map(|&v| f64::from(v as f32)).collect(),
            })
            .collect();
        Self {
            header: CheckpointHeader {
                arch: model.arch().clone(),
                loss,
                seed,
                step,
                generator: GENERATOR.to_string(),
            },
            params,
            state,
        }
    }

    /// Builds a model for the stored architecture and loads every parameter.
    /// Names must match the model's parameters one-to-one.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.header.arch.clone(), 0)?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn restore_into(&self, model: &mut Model) -> Result<()> {
        if model.arch() != &self.header.arch {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint has {}, model has {}",
                self.header.arch.describe(),
                model.arch().describe()
            )));
        }
        let store = model.params();
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        let mut updates = Vec::with_capacity(self.params.len());
        for blob in &self.params {
            let id = store
                .find(&blob.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {:?}", blob.name)))?;
            let shape = store.get(id).shape().to_vec();
            let tensor = Tensor::new(&shape, blob.data.clone())
                .map_err(|e| Error::Checkpoint(format!("parameter {:?}: {e}", blob.name)))?;
            updates.push((id, tensor));
        }
        let mut seen = vec![false; store.len()];
        for (id, _) in &updates {
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(Error::Checkpoint("duplicate parameter name".into()));
            }
        }
        let params = model.params_mut();
        for (id, tensor) in updates {
            params.set(id, tensor)?;
        }
        Ok(())
    }

    pub fn state_blob(&self, name: &str) -> Option<&NamedBlob> {
        self.state.iter().find(|b| b.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&len_u32(header.len())?.to_le_bytes());
        out.extend_from_slice(&header);
        write_blobs(&mut out, &self.params, |v, out| {
            out.extend_from_slice(&(v as f32).to_le_bytes())
        })?;
        write_blobs(&mut out, &self.state, |v, out| {
            out.extend_from_slice(&v.to_le_bytes())
        })?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let params = r.blobs(4, |b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))?;
        let state = r.blobs(8, |b| f64::from_le_bytes(b.try_into().unwrap()))?;
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.at
            )));
        }
        Ok(Self {
            header,
            params,
            state,
        })
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))
}

fn write_blobs(
    out: &mut Vec<u8>,
    blobs: &[NamedBlob],
    put: impl Fn(f64, &mut Vec<u8>),
) -> Result<()> {
    out.extend_from_slice(&len_u32(blobs.len())?.to_le_bytes());
    for blob in blobs {
        out.extend_from_slice(&len_u32(blob.name.len())?.to_le_bytes());
        out.extend_from_slice(blob.name.as_bytes());
        out.extend_from_slice(&(blob.data.len() as u64).to_le_bytes());
        for &v in &blob.data {
            put(v, out);
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn blobs(&mut self, width: usize, decode: impl Fn(&[u8]) -> f64) -> Result<Vec<NamedBlob>> {
        let count = self.u32()?;
        let mut blobs = Vec::new();
        for _ in 0..count {
            let name_len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let n = usize::try_from(self.u64()?)
                .map_err(|_| Error::Checkpoint("blob too large".into()))?;
            let payload = self.take(
                n.checked_mul(width)
                    .ok_or_else(|| Error::Checkpoint("blob too large".into()))?,
            )?;
            let data: Vec<f64> = payload.chunks_exact(width).map(&decode).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "blob {name:?} holds non-finite values"
                )));
            }
            blobs.push(NamedBlob { name, data });
        }
        Ok(blobs)
    }
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Checkpoint::from_bytes(&bytes)
}
