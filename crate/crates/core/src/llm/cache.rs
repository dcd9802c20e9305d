//! On-disk cache of per-sample language-model features.
//!
//! File layout (little-endian): `"FLC1"`, `u32` row count, `u32` width,
//! row-major f32 values.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::llm::serialize::SerializationConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FLC1";

pub fn encode_rows<T: Scalar>(rows: &[Tensor<T>]) -> Result<Vec<u8>> {
    let dim = rows.first().map_or(0, Tensor::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("feature cache rows differ in width".into()));
    }
    let mut out = Vec::with_capacity(12 + rows.len() * dim * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in rows {
        for v in r.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_rows<T: Scalar>(bytes: &[u8]) -> Result<Vec<Tensor<T>>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::format("FLC1", "bad header"));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize;
    let (count, dim) = (word(4), word(8));
    if bytes.len() != 12 + count * dim * 4 {
        return Err(Error::format("FLC1", format!("expected {} payload bytes, found {}", count * dim * 4, bytes.len() - 12)));
    }
    Ok(bytes[12..]
        .chunks_exact(4)
        .map(|c| T::c(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect::<Vec<_>>()
        .chunks(dim.max(1))
        .take(count)
        .map(|r| Tensor::vector(r.to_vec()))
        .collect())
}

/// Directory of FLC1 files named by a content key.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FeatureCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Key over the dataset digest, serialization settings and weight
    /// fingerprint.
    pub fn key(dataset_hash: &str, cfg: &SerializationConfig, weights_fingerprint: &str) -> String {
        let mut h = Sha256::new();
        h.update(dataset_hash.as_bytes());
        h.update([0]);
        h.update(cfg.fractional_digits.to_le_bytes());
        h.update(cfg.separator.as_bytes());
        h.update([0]);
        h.update(weights_fingerprint.as_bytes());
        format!("{:x}", h.finalize())
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.flc"))
    }

    /// Cached rows, or `None` when absent or unreadable.
    pub fn load<T: Scalar>(&self, key: &str, expected_rows: usize) -> Option<Vec<Tensor<T>>> {
        let bytes = fs::read(self.path(key)).ok()?;
        match decode_rows(&bytes) {
            Ok(rows) if rows.len() == expected_rows => Some(rows),
            Ok(_) => None,
            Err(e) => {
                log::warn!("ignoring corrupt feature cache {}: {e}", self.path(key).display());
                None
            }
        }
    }

    /// Writes through a temporary file so readers never see a partial file.
    pub fn store<T: Scalar>(&self, key: &str, rows: &[Tensor<T>]) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path(key);
        let tmp = path.with_extension("flc.tmp");
        fs::write(&tmp, encode_rows(rows)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let rows = vec![Tensor::vector(vec![1.0f32, -2.5, 3.0]), Tensor::vector(vec![0.0, 1e-7, -0.0])];
        let bytes = encode_rows(&rows).unwrap();
        assert_eq!(&bytes[..4], b"FLC1");
        assert_eq!(bytes.len(), 12 + 2 * 3 * 4);
        assert_eq!(decode_rows::<f32>(&bytes).unwrap(), rows);
        assert!(decode_rows::<f32>(&bytes[..bytes.len() - 1]).is_err());
        assert!(encode_rows(&[Tensor::vector(vec![1.0f32]), Tensor::vector(vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn key_depends_on_every_part() {
        let cfg = SerializationConfig::default();
        let k = FeatureCache::key("d", &cfg, "w");
        assert_ne!(k, FeatureCache::key("e", &cfg, "w"));
        assert_ne!(k, FeatureCache::key("d", &cfg, "x"));
        let other = SerializationConfig { fractional_digits: 2, ..cfg.clone() };
        assert_ne!(k, FeatureCache::key("d", &other, "w"));
    }

    #[test]
    fn store_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path().join("c"));
        let rows = vec![Tensor::vector(vec![1.0f64, 2.0])];
        cache.store("k", &rows).unwrap();
        assert_eq!(cache.load::<f64>("k", 1), Some(rows));
        assert_eq!(cache.load::<f64>("k", 2), None);
        assert_eq!(cache.load::<f64>("missing", 1), None);
    }
}
