//! Paired training runs with and without entropy weighting.

use serde::{Deserialize, Serialize};

use super::train::train_container;
use super::TrainConfig;
use crate::container::DatasetContainer;
use crate::error::CliError;
use crate::Context;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub entropy: f64,
    pub no_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,entropy_accuracy,no_entropy_accuracy\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.6},{:.6}\n", r.seed, r.entropy, r.no_entropy));
        }
        s
    }

    /// Mean of `entropy - no_entropy` over seeds.
    pub fn mean_gap(&self) -> f64 {
        let n = self.rows.len().max(1) as f64;
        self.rows.iter().map(|r| r.entropy - r.no_entropy).sum::<f64>() / n
    }
}

/// Train `base` on both containers for every seed. The two containers must
/// hold the same samples so that each seed sees the same split.
pub fn run(
    ctx: &Context,
    with_entropy: &DatasetContainer,
    without_entropy: &DatasetContainer,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationReport, CliError> {
    if with_entropy.labels() != without_entropy.labels() {
        return Err(CliError::Data("ablation containers hold different samples".into()));
    }
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut tc = base.clone();
        tc.model.seed = seed;
        let (_, a) = train_container(ctx, with_entropy, &tc)?;
        let (_, b) = train_container(ctx, without_entropy, &tc)?;
        rows.push(AblationRow {
            seed,
            entropy: a.test_accuracy,
            no_entropy: b.test_accuracy,
        });
    }
    Ok(AblationReport { rows })
}
