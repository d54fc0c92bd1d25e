pub mod ablation;
pub mod classify;
pub mod eval;
pub mod extract;
pub mod hypersearch;
pub mod synth;
pub mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cryptoid_core::dcnn::{stratified_split, Checkpoint, ModelConfig, OptimConfig};
use cryptoid_core::rng;

use crate::error::CliError;

/// Model and optimizer settings, as read by `--config` and written by `hypersearch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
}

impl TrainConfig {
    pub fn read(path: &Path) -> Result<TrainConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

const SPLIT_TAG: u64 = 0x0073_706c_6974;
pub const TRAIN_FRACTION: f64 = 0.75;

/// The stratified train/test split used by `train`, `eval` and `hypersearch`.
pub fn split_indices(labels: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    stratified_split(labels, TRAIN_FRACTION, rng::derive(seed, SPLIT_TAG))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}
