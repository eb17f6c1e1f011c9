//! Checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes       | content                                        |
//! |-------------|------------------------------------------------|
//! | 8           | magic `MPDGCKPT`                               |
//! | 4           | format version (u32)                           |
//! | 8           | header length `h` (u64)                        |
//! | h           | JSON header: configs, epoch, tensor table      |
//! | 8 · n       | tensor blob, f64 values                        |
//! | 32          | SHA-256 of every preceding byte                |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{OptimizerState, TrainConfig, TrainError};
use crate::model::{ModelConfig, Parameters};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MPDGCKPT";
const DIGEST_LEN: usize = 32;
const PREAMBLE_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub optimizer: OptimizerState,
    pub train_config: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Content hash of the vocabulary the model was trained with.
    pub vocab_hash: String,
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        &self.params.config
    }

    /// Bit-level equality of every tensor plus equality of the metadata.
    pub fn bit_eq(&self, other: &Checkpoint) -> bool {
        self.params.bit_eq(&other.params)
            && self.optimizer.bit_eq(&other.optimizer)
            && self.train_config == other.train_config
            && self.epoch == other.epoch
            && self.vocab_hash == other.vocab_hash
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    optimizer_step: u64,
    vocab_hash: String,
    dtype: String,
    tensors: Vec<TensorEntry>,
    blob_values: usize,
}

const GROUPS: [&str; 3] = ["params", "first_moment", "second_moment"];

fn groups(ckpt: &Checkpoint) -> [&Parameters; 3] {
    [&ckpt.params, &ckpt.optimizer.first_moment, &ckpt.optimizer.second_moment]
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    to_bytes_with_version(ckpt, FORMAT_VERSION)
}

pub(crate) fn to_bytes_with_version(ckpt: &Checkpoint, version: u32) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0;
    for (group, p) in GROUPS.iter().zip(groups(ckpt)) {
        for t in p.tensors() {
            entries.push(TensorEntry {
                group: group.to_string(),
                name: t.name,
                shape: t.shape,
                offset,
                len: t.data.len(),
            });
            offset += t.data.len();
            for v in t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = Header {
        model: ckpt.params.config,
        train_config: ckpt.train_config.clone(),
        epoch: ckpt.epoch,
        optimizer_step: ckpt.optimizer.step,
        vocab_hash: ckpt.vocab_hash.clone(),
        dtype: "f64-le".into(),
        tensors: entries,
        blob_values: offset,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + blob.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    let integrity = |m: &str| TrainError::Integrity(m.to_string());
    if bytes.len() < PREAMBLE_LEN + DIGEST_LEN {
        return Err(integrity("file is shorter than the fixed preamble"));
    }
    if &bytes[..8] != MAGIC {
        return Err(integrity("bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(TrainError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body_end = bytes.len() - DIGEST_LEN;
    if header_len > body_end - PREAMBLE_LEN {
        return Err(integrity("header length runs past the end of the file"));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(integrity("checksum mismatch"));
    }
    let header_end = PREAMBLE_LEN + header_len;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE_LEN..header_end])
        .map_err(|e| TrainError::Integrity(format!("unreadable header: {e}")))?;
    let blob = &bytes[header_end..body_end];
    if blob.len() != header.blob_values * 8 {
        return Err(integrity("tensor blob length does not match the header"));
    }
    if header.dtype != "f64-le" {
        return Err(TrainError::Integrity(format!("unsupported dtype {}", header.dtype)));
    }

    let mut loaded = [
        Parameters::zeros(&header.model),
        Parameters::zeros(&header.model),
        Parameters::zeros(&header.model),
    ];
    let mut entries = header.tensors.iter();
    for (group, p) in GROUPS.iter().zip(loaded.iter_mut()) {
        for (name, dst) in p.tensors_mut() {
            let e = entries
                .next()
                .ok_or_else(|| integrity("tensor table is shorter than the model"))?;
            if e.group != *group || e.name != name || e.len != dst.len() || e.shape.iter().product::<usize>() != e.len {
                return Err(TrainError::Integrity(format!(
                    "tensor table entry {}/{} does not match the model layout ({group}/{name})",
                    e.group, e.name
                )));
            }
            let end = e
                .offset
                .checked_add(e.len)
                .filter(|&end| end <= header.blob_values)
                .ok_or_else(|| integrity("tensor offset out of range"))?;
            for (v, chunk) in dst.iter_mut().zip(blob[e.offset * 8..end * 8].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }
    }
    if entries.next().is_some() {
        return Err(integrity("tensor table is longer than the model"));
    }
    let [params, first_moment, second_moment] = loaded;
    Ok(Checkpoint {
        params,
        optimizer: OptimizerState {
            first_moment,
            second_moment,
            step: header.optimizer_step,
        },
        train_config: header.train_config,
        epoch: header.epoch,
        vocab_hash: header.vocab_hash,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    fs::write(path, to_bytes(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            vocab_size: 9,
            d_model: 4,
            n_heads: 2,
            n_layers: 1,
            d_ff: 6,
            max_seq_len: 7,
            seed: 1,
        };
        let params = Parameters::init(&cfg).unwrap();
        let mut optimizer = OptimizerState::new(&params);
        optimizer.first_moment.output_bias[2] = -1.5e-300;
        optimizer.second_moment.token_embedding[[0, 0]] = f64::MIN_POSITIVE;
        optimizer.step = 17;
        Checkpoint {
            params,
            optimizer,
            train_config: TrainConfig {
                model: cfg,
                ..TrainConfig::default()
            },
            epoch: 3,
            vocab_hash: "abc123".into(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = from_bytes(&to_bytes(&c)).unwrap();
        assert!(back.bit_eq(&c));
        assert_eq!(back, c);
    }

    #[test]
    fn truncation_is_integrity_error() {
        let bytes = to_bytes(&sample());
        for cut in [0, 10, PREAMBLE_LEN + 5, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(from_bytes(&bytes[..cut]), Err(TrainError::Integrity(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn flipped_bit_is_integrity_error() {
        let mut bytes = to_bytes(&sample());
        let i = bytes.len() - DIGEST_LEN - 3;
        bytes[i] ^= 0x10;
        assert!(matches!(from_bytes(&bytes), Err(TrainError::Integrity(_))));
    }

    #[test]
    fn other_version_rejected() {
        let bytes = to_bytes_with_version(&sample(), 2);
        assert!(matches!(
            from_bytes(&bytes),
            Err(TrainError::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let c = sample();
        save_checkpoint(&c, &path).unwrap();
        assert!(load_checkpoint(&path).unwrap().bit_eq(&c));
    }
}
