//! Balanced on-disk corpora of synthesized programs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::isa::disassemble;
use crate::label::ClassLabel;
use crate::rng;

use super::{synthesize, Codegen, Obfuscation, SynthError, SynthSpec};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const FORMAT: &str = "cryptoid-manifest";

/// First line of the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub master_seed: u64,
    pub classes: Vec<ClassLabel>,
    pub class_counts: BTreeMap<ClassLabel, usize>,
    pub n: usize,
}

/// One line per sample after the header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub label: ClassLabel,
    pub obfuscation: Obfuscation,
    pub codegen: Codegen,
    pub seed: u64,
    /// Relative to the manifest's directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("need at least one class")]
    NoClasses,
    #[error("n = {n} is smaller than the {classes} requested classes")]
    TooFew { n: usize, classes: usize },
    #[error("sample {index}: {source}")]
    Synth { index: usize, source: SynthError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest line {line}: {msg}")]
    Format { line: usize, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `programs/00042_rsa-aes.asm`.
pub fn program_path(index: usize, label: ClassLabel) -> String {
    format!("programs/{index:05}_{}.asm", label.name().replace('+', "-"))
}

impl DatasetManifest {
    /// The sample plan: class `i mod C`, seed derived from `(master_seed, i)`.
    pub fn plan(classes: &[ClassLabel], n: usize, master_seed: u64) -> Result<DatasetManifest, DatasetError> {
        if classes.is_empty() {
            return Err(DatasetError::NoClasses);
        }
        if n < classes.len() {
            return Err(DatasetError::TooFew {
                n,
                classes: classes.len(),
            });
        }
        let mut class_counts = BTreeMap::new();
        let records: Vec<ManifestRecord> = (0..n)
            .map(|index| {
                let label = classes[index % classes.len()];
                *class_counts.entry(label).or_insert(0) += 1;
                let seed = rng::derive(master_seed, index as u64);
                let spec = SynthSpec::draw(label, seed);
                ManifestRecord {
                    index,
                    label,
                    obfuscation: spec.obfuscation,
                    codegen: spec.codegen,
                    seed,
                    path: program_path(index, label),
                }
            })
            .collect();
        Ok(DatasetManifest {
            header: ManifestHeader {
                format: FORMAT.into(),
                version: 1,
                master_seed,
                classes: classes.to_vec(),
                class_counts,
                n,
            },
            records,
        })
    }

    /// Regenerate the full spec of a record.
    pub fn spec(&self, record: &ManifestRecord) -> SynthSpec {
        SynthSpec::draw(record.label, record.seed)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&self.header).expect("serializable");
        s.push('\n');
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("serializable"));
            s.push('\n');
        }
        s
    }

    pub fn read(path: &Path) -> Result<DatasetManifest, DatasetError> {
        let f = fs::File::open(path).map_err(io_err(path))?;
        let mut lines = io::BufReader::new(f).lines();
        let bad = |line: usize, e: serde_json::Error| DatasetError::Format {
            line,
            msg: e.to_string(),
        };
        let first = lines
            .next()
            .ok_or(DatasetError::Format {
                line: 1,
                msg: "empty manifest".into(),
            })?
            .map_err(io_err(path))?;
        let header: ManifestHeader = serde_json::from_str(&first).map_err(|e| bad(1, e))?;
        if header.format != FORMAT {
            return Err(DatasetError::Format {
                line: 1,
                msg: format!("unknown format `{}`", header.format),
            });
        }
        let mut records = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| bad(k + 2, e))?);
        }
        if records.len() != header.n {
            return Err(DatasetError::Format {
                line: 1,
                msg: format!("header announces {} samples, found {}", header.n, records.len()),
            });
        }
        Ok(DatasetManifest { header, records })
    }
}

/// Synthesize `n` balanced samples into `out_dir` and write the manifest.
pub fn build_dataset(
    classes: &[ClassLabel],
    n: usize,
    master_seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let manifest = DatasetManifest::plan(classes, n, master_seed)?;
    let programs = out_dir.join("programs");
    fs::create_dir_all(&programs).map_err(io_err(&programs))?;
    manifest.records.par_iter().try_for_each(|r| {
        let spec = manifest.spec(r);
        let p = synthesize(&spec).map_err(|source| DatasetError::Synth { index: r.index, source })?;
        let text = disassemble(&p).map_err(|e| DatasetError::Synth {
            index: r.index,
            source: e.into(),
        })?;
        let path = out_dir.join(&r.path);
        fs::write(&path, text).map_err(io_err(&path))
    })?;
    let path = out_dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(manifest.to_jsonl().as_bytes()).map_err(io_err(&path))?;
    Ok(manifest)
}
