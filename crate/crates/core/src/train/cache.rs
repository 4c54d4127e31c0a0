use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::io::{decode_checkpoint, encode_checkpoint};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelSpec};
use crate::tensor::io::write_atomic;

/// On-disk store of retrained checkpoints keyed by a SHA-256 over everything
/// that determines the result. Each entry carries a digest of its own bytes.
#[derive(Clone, Debug)]
pub struct RetrainCache {
    dir: PathBuf,
}

impl RetrainCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(
        data_hash: &str,
        spec: &ModelSpec,
        cfg: &TrainConfig,
        subset: &[usize],
        init_hash: &str,
        seed: u64,
    ) -> String {
        let mut h = Sha256::new();
        h.update(data_hash.as_bytes());
        h.update(serde_json::to_vec(spec).expect("spec serializes"));
        h.update(serde_json::to_vec(cfg).expect("config serializes"));
        h.update((subset.len() as u64).to_le_bytes());
        for &i in subset {
            h.update((i as u64).to_le_bytes());
        }
        h.update(init_hash.as_bytes());
        h.update(seed.to_le_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.atck"))
    }

    /// `Ok(None)` when absent; `CacheCorrupt` when present but unreadable.
    pub fn load(&self, key: &str) -> Result<Option<Checkpoint>> {
        let bytes = match fs::read(self.path(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let corrupt = || Error::CacheCorrupt { key: key.to_string() };
        if bytes.len() < 32 {
            return Err(corrupt());
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt());
        }
        decode_checkpoint(body).map(Some).map_err(|_| corrupt())
    }

    pub fn store(&self, key: &str, ckpt: &Checkpoint) -> Result<()> {
        let mut bytes = encode_checkpoint(ckpt);
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        write_atomic(&self.path(key), &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_load_and_detect_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RetrainCache::new(dir.path()).unwrap();
        let spec = ModelSpec::logistic(2, 2);
        let ck = Checkpoint::new(spec, vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0], 1, 2).unwrap();
        let key = RetrainCache::key("d", &spec, &TrainConfig::default(), &[0, 2], "i", 2);
        assert!(cache.load(&key).unwrap().is_none());
        cache.store(&key, &ck).unwrap();
        assert_eq!(cache.load(&key).unwrap().unwrap(), ck);
        let path = dir.path().join(format!("{key}.atck"));
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(cache.load(&key), Err(Error::CacheCorrupt { .. })));
        let other = RetrainCache::key("d", &spec, &TrainConfig::default(), &[0, 1], "i", 2);
        assert_ne!(key, other);
    }
}
