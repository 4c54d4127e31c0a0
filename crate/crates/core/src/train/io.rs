//! `ATCK` checkpoint files: magic, u32 version, u32 header length, JSON
//! header (spec, epoch, seed, parameter count), then little-endian `f64` theta.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelSpec};
use crate::tensor::io::write_atomic;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ATCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    epoch: usize,
    seed: u64,
    params: usize,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        spec: ckpt.spec,
        epoch: ckpt.epoch,
        seed: ckpt.seed,
        params: ckpt.theta.len(),
    })
    .expect("header serializes");
    let mut buf = Vec::with_capacity(12 + header.len() + 8 * ckpt.theta.len());
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in &ckpt.theta {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 {
        return Err(Error::Length {
            what: "checkpoint header",
            expected: 12,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            what: "checkpoint",
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 12 + hlen {
        return Err(Error::Length {
            what: "checkpoint header",
            expected: 12 + hlen,
            found: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + hlen])?;
    let payload = &bytes[12 + hlen..];
    if header.params != header.spec.param_count() || payload.len() != 8 * header.params {
        return Err(Error::Length {
            what: "checkpoint payload",
            expected: 8 * header.spec.param_count(),
            found: payload.len(),
        });
    }
    let theta = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Checkpoint::new(header.spec, theta, header.epoch, header.seed)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let spec = ModelSpec::mlp(3, 2, 2);
        let theta = (0..spec.param_count()).map(|i| (i as f64).sin() * 1e-3 + 0.1).collect();
        Checkpoint::new(spec, theta, 4, 77).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.atck");
        let c = sample();
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        let bits = |t: &[f64]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.theta), bits(&c.theta));
    }

    #[test]
    fn corruption_errors_are_distinct() {
        let good = encode_checkpoint(&sample());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad_magic), Err(Error::BadMagic { .. })));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(decode_checkpoint(&bad_version), Err(Error::Version { .. })));
        let truncated = &good[..good.len() - 3];
        assert!(matches!(decode_checkpoint(truncated), Err(Error::Length { .. })));
    }
}
