//! Feature containers: every sentence matrix of a dataset in one file.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, JSON header,
//! `u64` record count, then per record a `u64` byte length followed by
//! `u64` sample index, `u32` class index, `u8` truncation flag, `u64` column
//! count and `d * s` little-endian `f64` values. A SHA-256 of everything
//! before it closes the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cryptoid_core::dcnn::Example;
use cryptoid_core::features::{FeatureConfig, SentenceMatrix};
use cryptoid_core::isa::Opcode;
use cryptoid_core::ClassLabel;

use crate::error::CliError;

const MAGIC: &[u8; 8] = b"CIDFEATS";
pub const CONTAINER_VERSION: u32 = 1;

/// A sample that could not be traced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub index: usize,
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub version: u32,
    pub d: usize,
    pub classes: Vec<ClassLabel>,
    pub mnemonics: Vec<Opcode>,
    pub master_seed: u64,
    pub no_entropy: bool,
    pub max_s: usize,
    pub step_limit: u64,
    pub skipped: Vec<Skip>,
}

impl ContainerHeader {
    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            mnemonics: self.mnemonics.clone(),
            max_s: self.max_s,
            no_entropy: self.no_entropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Position in the source manifest.
    pub index: usize,
    /// Index into the header's class list.
    pub class: usize,
    pub matrix: SentenceMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetContainer {
    pub header: ContainerHeader,
    pub records: Vec<Record>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Data(format!("feature container: {}", msg.into()))
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        if self.buf.len() < n {
            return Err(bad("truncated"));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl DatasetContainer {
    /// Check the invariants a reader relies on.
    pub fn check(&self) -> Result<(), CliError> {
        let h = &self.header;
        if h.mnemonics.len() != h.d {
            return Err(bad(format!("{} mnemonics for d = {}", h.mnemonics.len(), h.d)));
        }
        for r in &self.records {
            if r.matrix.d != h.d {
                return Err(bad(format!(
                    "record {} has d = {}, header says {}",
                    r.index, r.matrix.d, h.d
                )));
            }
            if r.class >= h.classes.len() {
                return Err(bad(format!("record {} has class index {}", r.index, r.class)));
            }
            if r.matrix.values.len() != r.matrix.d * r.matrix.s {
                return Err(bad(format!("record {} has a malformed matrix", r.index)));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.header).expect("serializable");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            let body = 8 + 4 + 1 + 8 + 8 * r.matrix.values.len();
            out.extend_from_slice(&(body as u64).to_le_bytes());
            out.extend_from_slice(&(r.index as u64).to_le_bytes());
            out.extend_from_slice(&(r.class as u32).to_le_bytes());
            out.push(r.matrix.truncated as u8);
            out.extend_from_slice(&(r.matrix.s as u64).to_le_bytes());
            for v in &r.matrix.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<DatasetContainer, CliError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes.len() < 8 + 4 + 8 + 32 {
            return Err(bad("truncated"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        let mut rd = Reader { buf: &body[8..] };
        let version = rd.u32()?;
        if version != CONTAINER_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        if Sha256::digest(body).as_slice() != sum {
            return Err(bad("checksum mismatch"));
        }
        let hlen = rd.u64()? as usize;
        let header: ContainerHeader = serde_json::from_slice(rd.take(hlen)?).map_err(|e| bad(e.to_string()))?;
        let n = rd.u64()? as usize;
        let mut records = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = rd.u64()? as usize;
            let mut r = Reader { buf: rd.take(len)? };
            let index = r.u64()? as usize;
            let class = r.u32()? as usize;
            let truncated = r.take(1)?[0] != 0;
            let s = r.u64()? as usize;
            let cells = header
                .d
                .checked_mul(s)
                .filter(|c| c * 8 == r.buf.len())
                .ok_or_else(|| bad("record length"))?;
            let values: Vec<f64> = r
                .take(cells * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let label = header.classes.get(class).copied();
            records.push(Record {
                index,
                class,
                matrix: SentenceMatrix {
                    d: header.d,
                    s,
                    values,
                    label,
                    truncated,
                },
            });
        }
        if !rd.buf.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let c = DatasetContainer { header, records };
        c.check()?;
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<DatasetContainer, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        DatasetContainer::from_bytes(&bytes)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.class).collect()
    }

    pub fn examples(&self, which: &[usize]) -> Vec<Example> {
        which
            .iter()
            .map(|&i| Example {
                x: self.records[i].matrix.clone(),
                y: self.records[i].class,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cryptoid_core::isa::WEIGHTED_MNEMONICS;

    fn sample() -> DatasetContainer {
        let header = ContainerHeader {
            version: CONTAINER_VERSION,
            d: 12,
            classes: vec![ClassLabel::Aes, ClassLabel::Rc4],
            mnemonics: WEIGHTED_MNEMONICS.to_vec(),
            master_seed: 3,
            no_entropy: false,
            max_s: 4096,
            step_limit: 1000,
            skipped: vec![Skip {
                index: 2,
                path: "programs/00002_aes.asm".into(),
                reason: "parse error".into(),
            }],
        };
        let records = (0..3)
            .map(|i| Record {
                index: i,
                class: i % 2,
                matrix: SentenceMatrix {
                    d: 12,
                    s: i + 1,
                    values: (0..12 * (i + 1)).map(|v| v as f64 * 0.5).collect(),
                    label: Some(header.classes[i % 2]),
                    truncated: i == 1,
                },
            })
            .collect();
        DatasetContainer { header, records }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(DatasetContainer::from_bytes(&bytes).unwrap(), c);
        assert_eq!(bytes, sample().to_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        let mut b = bytes.clone();
        let n = b.len();
        b[n - 40] ^= 0x80;
        assert!(DatasetContainer::from_bytes(&b).is_err());
        assert!(DatasetContainer::from_bytes(&bytes[..n - 5]).is_err());
        assert!(DatasetContainer::from_bytes(b"CIDFEAT").is_err());
    }

    #[test]
    fn check_catches_bad_records() {
        let mut c = sample();
        c.records[0].class = 7;
        assert!(c.check().is_err());
        let mut c = sample();
        c.records[1].matrix.d = 11;
        assert!(c.check().is_err());
    }
}
