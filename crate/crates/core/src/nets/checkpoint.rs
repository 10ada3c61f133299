//! Checkpoint container: `SSCK`, u32 version, u64 index length, a JSON index
//! (metadata plus name/shape/offset of every array), then the arrays as
//! concatenated little-endian f32. Offsets are in bytes from the start of the
//! array payload.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::params::ParamStore;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed index: {0}")]
    Index(#[from] serde_json::Error),
    #[error("array {name}: {reason}")]
    Array { name: String, reason: String },
    #[error("missing array {0}")]
    Missing(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Index {
    step: u64,
    meta: serde_json::Value,
    arrays: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Named f32 arrays plus free-form JSON metadata (network specs and the
/// training config).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub step: u64,
    pub meta: serde_json::Value,
    pub arrays: IndexMap<String, Array>,
}

impl Checkpoint {
    pub fn new(step: u64, meta: serde_json::Value) -> Self {
        Self {
            step,
            meta,
            arrays: IndexMap::new(),
        }
    }

    pub fn put(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "array shape mismatch");
        self.arrays.insert(
            name.into(),
            Array {
                shape: shape.to_vec(),
                data,
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<&Array, CheckpointError> {
        self.arrays
            .get(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    /// Stores every entry of `store` (values only) under `prefix/`.
    pub fn put_store<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (name, p) in store.iter() {
            self.put(
                format!("{prefix}/{name}"),
                &p.shape,
                p.value.iter().map(|v| v.as_f64() as f32).collect(),
            );
        }
    }

    /// Overwrites the values of `store` from `prefix/` entries; every entry
    /// must exist with a matching shape.
    pub fn load_store<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<(), CheckpointError> {
        for (name, p) in store.iter_mut() {
            let key = format!("{prefix}/{name}");
            let a = self.get(&key)?;
            if a.shape != p.shape {
                return Err(CheckpointError::Array {
                    name: key,
                    reason: format!("shape {:?}, network expects {:?}", a.shape, p.shape),
                });
            }
            for (v, &x) in p.value.iter_mut().zip(&a.data) {
                *v = T::of(x as f64);
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let arrays = self
            .arrays
            .iter()
            .map(|(name, a)| {
                let e = Entry {
                    name: name.clone(),
                    shape: a.shape.clone(),
                    offset,
                };
                offset += 4 * a.data.len() as u64;
                e
            })
            .collect();
        let index = serde_json::to_vec(&Index {
            step: self.step,
            meta: self.meta.clone(),
            arrays,
        })
        .expect("index serializes");
        let mut out = Vec::with_capacity(16 + index.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(index.len() as u64).to_le_bytes());
        out.extend_from_slice(&index);
        for a in self.arrays.values() {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = bytes;
        let mut head = [0u8; 16];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        if r.len() < len {
            return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
        }
        let index: Index = serde_json::from_slice(&r[..len])?;
        let payload = &r[len..];
        let mut arrays = IndexMap::new();
        for e in index.arrays {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * n;
            if end > payload.len() {
                return Err(CheckpointError::Array {
                    name: e.name,
                    reason: "payload truncated".into(),
                });
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.insert(e.name, Array { shape: e.shape, data });
        }
        Ok(Self {
            step: index.step,
            meta: index.meta,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// SHA-256 of the serialized form.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_bytes()))
    }
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: impl AsRef<Path>) -> io::Result<String> {
    Ok(format!("{:x}", Sha256::digest(fs::read(path)?)))
}
