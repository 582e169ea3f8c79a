//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MCRD" | version: u32 | section count: u32
//! repeated: tag: [u8; 4] | payload length: u64 | payload
//! crc32 of everything before it: u32
//! ```
//!
//! The `META` section is UTF-8 JSON (config, hashes, epoch, optimizer
//! scalars, RNG position). Each `TENS` section holds one tensor:
//! name length `u32`, name bytes, rank `u32`, dims `u64`, then values as
//! `f64`. Tensor names are prefixed `param/`, `adam.m/` or `adam.v/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adam::AdamState;
use crate::config::TrainConfig;
use crate::model::Lexicon;
use crate::params::ModelParams;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MCRD";
pub const FORMAT_VERSION: u32 = 1;

const META_TAG: &[u8; 4] = b"META";
const TENSOR_TAG: &[u8; 4] = b"TENS";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint integrity check failed: stored crc {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint was trained on a different {what}: expected hash {expected}, data has {found}")]
    LexiconMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
}

/// Position of a ChaCha8 stream, enough to continue it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string: JSON numbers cannot carry a u128 losslessly.
    pub word_pos: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    pub vocab_hash: String,
    pub feature_hash: String,
    pub epoch: usize,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    vocab_hash: String,
    feature_hash: String,
    epoch: usize,
    adam_step: u64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_epsilon: f64,
    rng: RngState,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    let mut payload = Vec::with_capacity(16 + name.len() + 8 * t.shape().len() + 8 * t.len());
    payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
    payload.extend_from_slice(name.as_bytes());
    payload.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        payload.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(TENSOR_TAG);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn read_tensor(payload: &[u8]) -> Result<(String, Tensor), CheckpointError> {
    let mut r = Reader { buf: payload, pos: 0 };
    let name_len = r.u32()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
        .to_string();
    let rank = r.u32()? as usize;
    let shape = (0..rank)
        .map(|_| r.u64().map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let count = count.ok_or_else(|| CheckpointError::Malformed(format!("{name}: shape overflow")))?;
    let bytes = r.take(count.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if !r.done() {
        return Err(CheckpointError::Malformed(format!("{name}: trailing bytes")));
    }
    let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
    Ok((name, t))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            feature_hash: self.feature_hash.clone(),
            epoch: self.epoch,
            adam_step: self.adam.step,
            adam_beta1: self.adam.beta1,
            adam_beta2: self.adam.beta2,
            adam_epsilon: self.adam.epsilon,
            rng: self.rng.clone(),
        };
        let meta = serde_json::to_vec(&meta).expect("metadata serializes");

        let tensors: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (format!("param/{n}"), t))
            .chain(self.adam.m.iter().map(|(n, t)| (format!("adam.m/{n}"), t)))
            .chain(self.adam.v.iter().map(|(n, t)| (format!("adam.v/{n}"), t)))
            .collect();

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(1 + tensors.len() as u32).to_le_bytes());
        out.extend_from_slice(META_TAG);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (name, t) in tensors {
            put_tensor(&mut out, &name, t);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 16 {
            return Err(CheckpointError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }

        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let sections = r.u32()?;
        let mut meta: Option<Meta> = None;
        let mut params = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for _ in 0..sections {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = usize::try_from(r.u64()?).map_err(|_| CheckpointError::Truncated)?;
            let payload = r.take(len)?;
            match &tag {
                META_TAG => {
                    let parsed = serde_json::from_slice(payload)
                        .map_err(|e| CheckpointError::Malformed(format!("metadata: {e}")))?;
                    if meta.replace(parsed).is_some() {
                        return Err(CheckpointError::Malformed("duplicate metadata".into()));
                    }
                }
                TENSOR_TAG => {
                    let (name, t) = read_tensor(payload)?;
                    let (map, key) = if let Some(k) = name.strip_prefix("param/") {
                        (&mut params, k)
                    } else if let Some(k) = name.strip_prefix("adam.m/") {
                        (&mut m, k)
                    } else if let Some(k) = name.strip_prefix("adam.v/") {
                        (&mut v, k)
                    } else {
                        return Err(CheckpointError::Malformed(format!("unknown tensor {name:?}")));
                    };
                    if map.insert(key.to_string(), t).is_some() {
                        return Err(CheckpointError::Malformed(format!("duplicate tensor {name:?}")));
                    }
                }
                other => {
                    return Err(CheckpointError::Malformed(format!(
                        "unknown section {:?}",
                        String::from_utf8_lossy(other)
                    )))
                }
            }
        }
        if !r.done() {
            return Err(CheckpointError::Malformed("trailing bytes after sections".into()));
        }
        let meta = meta.ok_or_else(|| CheckpointError::Malformed("missing metadata".into()))?;
        Ok(Self {
            config: meta.config,
            params: ModelParams::from_map(params),
            adam: AdamState {
                step: meta.adam_step,
                beta1: meta.adam_beta1,
                beta2: meta.adam_beta2,
                epsilon: meta.adam_epsilon,
                m,
                v,
            },
            vocab_hash: meta.vocab_hash,
            feature_hash: meta.feature_hash,
            epoch: meta.epoch,
            rng: meta.rng,
        })
    }

    /// Refuses a lexicon whose content differs from the training data.
    pub fn verify(&self, lexicon: &Lexicon) -> Result<(), CheckpointError> {
        if self.vocab_hash != lexicon.vocab_hash() {
            return Err(CheckpointError::LexiconMismatch {
                what: "vocabulary/embeddings",
                expected: self.vocab_hash.clone(),
                found: lexicon.vocab_hash().to_string(),
            });
        }
        if self.feature_hash != lexicon.feature_hash() {
            return Err(CheckpointError::LexiconMismatch {
                what: "feature table",
                expected: self.feature_hash.clone(),
                found: lexicon.feature_hash().to_string(),
            });
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ModelParams::default();
        params.insert("a", Tensor::matrix(2, 2, vec![0.1, -0.2, 1e-300, 3.5]).unwrap());
        params.insert("b", Tensor::vector(vec![f64::MIN_POSITIVE, -0.0]));
        let mut adam = AdamState::new(&params);
        adam.step = 7;
        adam.m.get_mut("a").unwrap().data_mut()[0] = 0.25;
        Checkpoint {
            config: TrainConfig::default(),
            params,
            adam,
            vocab_hash: "abc".into(),
            feature_hash: "def".into(),
            epoch: 3,
            rng: RngState {
                seed: [7; 32],
                stream: 0,
                word_pos: u128::MAX.to_string(),
            },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        let b = back.params.get("b").unwrap().data();
        assert!(b[1].is_sign_negative());
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"MCRD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(&bytes[12..16], b"META");
    }

    #[test]
    fn truncation_detected() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(CheckpointError::Checksum { .. } | CheckpointError::Truncated)
            ));
        }
    }

    #[test]
    fn bit_flip_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Checksum { .. })));
    }

    #[test]
    fn wrong_magic_and_version() {
        assert!(matches!(Checkpoint::from_bytes(b"NOPE1234567890123"), Err(CheckpointError::BadMagic)));
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::UnsupportedVersion(9))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.mcrd");
        save_checkpoint(&sample(), &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), sample());
        assert!(matches!(
            load_checkpoint(dir.path().join("missing.mcrd")),
            Err(CheckpointError::Io { .. })
        ));
    }
}
