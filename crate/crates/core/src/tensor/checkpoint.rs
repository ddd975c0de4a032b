//! Little-endian binary checkpoint container.
//!
//! ```text
//! "STTF"                 4 bytes magic
//! version                u32
//! config digest          32 bytes (SHA-256 of the canonical model config)
//! entry count            u32
//! per entry, sorted by name:
//!   name length          u32
//!   name                 UTF-8 bytes
//!   dtype tag            u8   (0 = f32, 1 = f64)
//!   rank                 u32
//!   extents              u64 * rank
//!   values               rank-product elements of dtype
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::array::Tensor;
use super::real::{DType, Real};

pub const MAGIC: &[u8; 4] = b"STTF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Values widened to `f64`; narrowing back to the stored dtype is exact.
    pub values: Vec<f64>,
}

impl Entry {
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        Self {
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn from_slice<T: Real>(shape: &[usize], data: &[T]) -> Self {
        Self {
            dtype: T::DTYPE,
            shape: shape.to_vec(),
            values: data.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        Tensor::new(self.shape.clone(), self.to_vec())
    }

    pub fn to_vec<T: Real>(&self) -> Vec<T> {
        self.values.iter().map(|&v| T::of(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config_digest: [u8; 32],
    pub entries: BTreeMap<String, Entry>,
}

impl Checkpoint {
    pub fn new(config_digest: [u8; 32]) -> Self {
        Self {
            config_digest,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.insert(name.into(), entry);
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(e.dtype.tag());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &e.values {
                match e.dtype {
                    DType::F32 => (v as f32).write_le(&mut out),
                    DType::F64 => v.write_le(&mut out),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not an STTF checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut digest = [0u8; 32];
        digest.copy_from_slice(r.take(32)?);
        let count = r.u32()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
                .to_string();
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("unknown dtype tag {tag}")))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.size())?;
            let values = raw
                .chunks_exact(dtype.size())
                .map(|c| match dtype {
                    DType::F32 => f32::read_le(c) as f64,
                    DType::F64 => f64::read_le(c),
                })
                .collect();
            entries.insert(name, Entry { dtype, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config_digest: digest,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
