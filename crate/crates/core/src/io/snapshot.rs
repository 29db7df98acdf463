//! Bit-packed mask snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SHDLB1"                 6 bytes magic
//! granularity              u8, 0 = weight, 1 = block
//! tensor count             u32
//! per tensor:
//!   name length            u32
//!   name                   UTF-8 bytes
//!   bit count              u64 (weights or blocks in the tensor)
//!   bits                   ceil(count / 8) bytes; entry i lives in byte i / 8
//!                          at bit i % 8 (LSB first); 1 = kept; padding bits 0
//! checksum                 u32, CRC-32 (IEEE) of every byte after the magic
//! ```

use std::fs;
use std::path::Path;

use crate::block::{BlockMaskState, BlockPartition};
use crate::error::{Error, Result};
use crate::pruning::MaskState;

pub const SNAPSHOT_MAGIC: &[u8; 6] = b"SHDLB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Weight,
    Block,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotTensor {
    pub name: String,
    pub kept: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSnapshot {
    pub granularity: Granularity,
    pub tensors: Vec<SnapshotTensor>,
}

impl MaskSnapshot {
    pub fn from_mask(mask: &MaskState) -> Self {
        Self {
            granularity: Granularity::Weight,
            tensors: mask
                .tensors()
                .iter()
                .map(|t| SnapshotTensor {
                    name: t.name.clone(),
                    kept: t.kept.clone(),
                })
                .collect(),
        }
    }

    /// Per-tensor block bits, in partition order.
    pub fn from_blocks(partition: &BlockPartition, bmask: &BlockMaskState) -> Self {
        let mut tensors: Vec<SnapshotTensor> = partition
            .tensors()
            .iter()
            .map(|t| SnapshotTensor {
                name: t.name.clone(),
                kept: Vec::new(),
            })
            .collect();
        for (block, &kept) in partition.blocks().iter().zip(bmask.kept()) {
            tensors[block.tensor].kept.push(kept);
        }
        Self {
            granularity: Granularity::Block,
            tensors,
        }
    }

    /// All bits in tensor order.
    pub fn flat(&self) -> impl Iterator<Item = bool> + '_ {
        self.tensors.iter().flat_map(|t| t.kept.iter().copied())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.push(match self.granularity {
            Granularity::Weight => 0,
            Granularity::Block => 1,
        });
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.kept.len() as u64).to_le_bytes());
            let mut packed = vec![0u8; t.kept.len().div_ceil(8)];
            for (i, &k) in t.kept.iter().enumerate() {
                if k {
                    packed[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&packed);
        }
        let checksum = crc32fast::hash(&out[SNAPSHOT_MAGIC.len()..]);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < SNAPSHOT_MAGIC.len() + 1 + 4 + 4 || &bytes[..6] != SNAPSHOT_MAGIC {
            return Err(Error::Format("not a mask snapshot (bad magic)".into()));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(&payload[6..]) != stored {
            return Err(Error::Format("mask snapshot checksum mismatch".into()));
        }
        let mut r = Reader::new(&payload[6..]);
        let granularity = match r.u8()? {
            0 => Granularity::Weight,
            1 => Granularity::Block,
            other => return Err(Error::Format(format!("unknown granularity flag {other}"))),
        };
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let bits = usize::try_from(r.u64()?)
                .map_err(|_| Error::Format("bit count too large".into()))?;
            let packed = r.take(bits.div_ceil(8))?;
            let kept = (0..bits)
                .map(|i| packed[i / 8] >> (i % 8) & 1 == 1)
                .collect();
            if bits % 8 != 0 && packed[bits / 8] >> (bits % 8) != 0 {
                return Err(Error::Format(format!("`{name}` has non-zero padding bits")));
            }
            tensors.push(SnapshotTensor { name, kept });
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Self {
            granularity,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Cursor over a byte slice; every read reports truncation as a format error.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format("truncated file".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}
