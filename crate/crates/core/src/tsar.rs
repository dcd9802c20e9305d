//! TSAR tensor archives.
//!
//! Layout (little-endian): `"TSAR"`, `u32` version (1), `u32` tensor count,
//! then per tensor `u32` name length, UTF-8 name, `u8` dtype (1 = f32),
//! `u32` rank, `u64` dims, raw f32 payload.

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TSAR";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of named f32 tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    tensors: Vec<ArchiveTensor>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Scalar>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::format("TSAR", format!("duplicate tensor name `{name}`")));
        }
        let data = tensor.data().iter().map(|v| v.as_f64() as f32).collect();
        self.tensors.push(ArchiveTensor { name, shape: tensor.shape().to_vec(), data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Tensor `name` converted to `T`, checked against `shape` when given.
    pub fn tensor<T: Scalar>(&self, name: &str, shape: Option<&[usize]>) -> Result<Tensor<T>> {
        let t = self.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if let Some(want) = shape {
            if t.shape != want {
                return Err(Error::Shape(format!("tensor `{name}` has shape {:?}, expected {want:?}", t.shape)));
            }
        }
        Tensor::from_vec(&t.shape, t.data.iter().map(|&v| T::c(v as f64)).collect())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn tensors(&self) -> &[ArchiveTensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_reader(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("TSAR", "bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::format("TSAR", format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut seen = HashSet::new();
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("TSAR", "tensor name is not UTF-8"))?;
            if !seen.insert(name.clone()) {
                return Err(Error::format("TSAR", format!("duplicate tensor name `{name}`")));
            }
            let mut dtype = [0u8; 1];
            read_exact(&mut r, &mut dtype)?;
            if dtype[0] != DTYPE_F32 {
                return Err(Error::format("TSAR", format!("tensor `{name}` has unsupported dtype {}", dtype[0])));
            }
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                shape.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::format("TSAR", "dimension overflow"))?);
            }
            let count: usize = shape.iter().product();
            let mut raw = vec![0u8; count * 4];
            read_exact(&mut r, &mut raw)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(ArchiveTensor { name, shape, data });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io("<tsar>", e))? != 0 {
            return Err(Error::format("TSAR", "trailing bytes after last tensor"));
        }
        Ok(TensorArchive { tensors })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(bytes.as_slice())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("TSAR", "truncated archive"),
        _ => Error::io("<tsar>", e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
