//! Model checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, JSON header,
//! every tensor as little-endian `f64` in [`ModelParams::tensors`] order, then
//! the SHA-256 of everything before it.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::FeatureConfig;

use super::{ModelConfig, ModelParams};

const MAGIC: &[u8; 8] = b"CIDMODEL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checksum mismatch")]
    Checksum,
    #[error("bad header: {0}")]
    Header(String),
    #[error("tensor shapes do not match the stored config")]
    Shape,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// How the training matrices were built; includes the row order.
    pub features: FeatureConfig,
    /// Output names, one per class.
    pub classes: Vec<String>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    features: FeatureConfig,
    classes: Vec<String>,
    tensor_lens: Vec<usize>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.params.tensors();
        let header = Header {
            config: self.config.clone(),
            features: self.features.clone(),
            classes: self.classes.clone(),
            tensor_lens: tensors.iter().map(|t| t.len()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("serializable");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 20 + 32 {
            return Err(CheckpointError::Truncated);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(CheckpointError::Checksum);
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let rest = &body[20..];
        if rest.len() < hlen {
            return Err(CheckpointError::Truncated);
        }
        let header: Header =
            serde_json::from_slice(&rest[..hlen]).map_err(|e| CheckpointError::Header(e.to_string()))?;
        header
            .config
            .validate()
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        if header.classes.len() != header.config.classes || header.features.mnemonics.len() != header.config.d {
            return Err(CheckpointError::Shape);
        }
        let mut params = ModelParams::zeros(&header.config);
        let want: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        if want != header.tensor_lens {
            return Err(CheckpointError::Shape);
        }
        let data = &rest[hlen..];
        if data.len() != want.iter().sum::<usize>() * 8 {
            return Err(CheckpointError::Shape);
        }
        let mut vals = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for t in params.tensors_mut() {
            for v in t {
                *v = vals.next().expect("length checked");
            }
        }
        Ok(Checkpoint {
            config: header.config,
            features: header.features,
            classes: header.classes,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = ModelConfig::desk(6, 3);
        Checkpoint {
            params: ModelParams::init(&config).unwrap(),
            config,
            features: FeatureConfig::default(),
            classes: ["aes", "rc4", "blowfish", "md5", "rsa", "rsa+aes"]
                .map(String::from)
                .to_vec(),
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
        assert_eq!(bytes, c.to_bytes());
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().to_bytes();
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 100] ^= 1;
        assert!(matches!(
            Checkpoint::from_bytes(&flipped),
            Err(CheckpointError::Checksum)
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..n - 1]),
            Err(CheckpointError::Checksum)
        ));
        assert!(matches!(
            Checkpoint::from_bytes(b"nonsense"),
            Err(CheckpointError::BadMagic)
        ));

        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(CheckpointError::Version(2))));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut c = sample();
        c.params.fc_b.push(0.0);
        assert!(matches!(
            Checkpoint::from_bytes(&c.to_bytes()),
            Err(CheckpointError::Shape)
        ));
        let mut c = sample();
        c.classes.pop();
        assert!(matches!(
            Checkpoint::from_bytes(&c.to_bytes()),
            Err(CheckpointError::Shape)
        ));
    }
}
