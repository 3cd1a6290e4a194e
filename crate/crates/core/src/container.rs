//! The TLON named-tensor container used for checkpoints, datasets and field
//! dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TLON" | u32 version = 1 | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | rank x u64 dims | f64 data (row-major)
//! ```

use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 4] = b"TLON";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed TLON data: {0}")]
    Format(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
}

pub type Result<T> = std::result::Result<T, ContainerError>;

/// Ordered list of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| ContainerError::MissingTensor(name.to_string()))
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| ContainerError::MissingTensor(name.to_string()))?;
        Ok(self.tensors.remove(pos).1)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload: usize = self.tensors.iter().map(|(n, t)| 2 + n.len() + 1 + 8 * (t.rank() + t.len())).sum();
        let mut out = Vec::with_capacity(12 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.tensors.len()).map_err(|_| ContainerError::Format("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (i, (name, t)) in self.tensors.iter().enumerate() {
            if self.tensors[..i].iter().any(|(other, _)| other == name) {
                return Err(ContainerError::Format(format!("duplicate tensor name {name:?}")));
            }
            let len = u16::try_from(name.len()).map_err(|_| ContainerError::Format(format!("name too long: {name:?}")))?;
            let rank = u8::try_from(t.rank()).map_err(|_| ContainerError::Format(format!("rank {} too large", t.rank())))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ContainerError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ContainerError::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut file = TensorFile::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| ContainerError::Format("tensor name is not UTF-8".into()))?
                .to_string();
            if file.get(&name).is_some() {
                return Err(ContainerError::Format(format!("duplicate tensor name {name:?}")));
            }
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?).map_err(|_| ContainerError::Format("dimension overflow".into()))?;
                numel = numel.checked_mul(d).ok_or_else(|| ContainerError::Format("dimension overflow".into()))?;
                shape.push(d);
            }
            let nbytes = numel.checked_mul(8).ok_or_else(|| ContainerError::Format("dimension overflow".into()))?;
            let raw = r.take(nbytes)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Tensor::new(shape, data).map_err(|e| ContainerError::Format(e.to_string()))?;
            file.push(name, t);
        }
        if r.pos != bytes.len() {
            return Err(ContainerError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|source| ContainerError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| ContainerError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ContainerError::Format(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
