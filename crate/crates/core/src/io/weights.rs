//! Weight files.
//!
//! ```text
//! "SHDLW1"           6 bytes magic
//! tensor count       u32 LE
//! per tensor:
//!   name length      u32 LE
//!   name             UTF-8 bytes
//!   rank             u32 LE
//!   dims             rank x u32 LE
//!   values           product(dims) x f32 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use super::snapshot::Reader;
use crate::error::{Error, Result};
use crate::tensor::{Param, ParamStore, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 6] = b"SHDLW1";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub tensors: Vec<WeightTensor>,
}

impl WeightFile {
    /// Stores every parameter, narrowed to `f32`.
    pub fn from_params(params: &ParamStore) -> Self {
        Self {
            tensors: params
                .iter()
                .map(|p| WeightTensor {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().iter().map(|&v| v as f32).collect(),
                })
                .collect(),
        }
    }

    /// Widens back to a parameter store; `prunable` decides each flag.
    pub fn to_params(&self, prunable: impl Fn(&str) -> bool) -> Result<ParamStore> {
        let params = self
            .tensors
            .iter()
            .map(|t| {
                Ok(Param {
                    name: t.name.clone(),
                    value: Tensor::new(
                        t.shape.clone(),
                        t.values.iter().map(|&v| v as f64).collect(),
                    )?,
                    prunable: prunable(&t.name),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamStore::new(params))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = WEIGHTS_MAGIC.to_vec();
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..6] != WEIGHTS_MAGIC {
            return Err(Error::Format("not a weight file (bad magic)".into()));
        }
        let mut r = Reader::new(&bytes[6..]);
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(WeightTensor {
                name,
                shape,
                values,
            });
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Self { tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
