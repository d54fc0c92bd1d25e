//! Random search over a shuffled Cartesian product of hyperparameter choices.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::rng;

use super::train::{train, Example, OptimConfig};
use super::{DcnnError, ModelConfig};

/// Candidate values per hyperparameter. The layer count follows the chosen
/// filter-width list, so width and map lists of different lengths produce
/// candidates that fail validation and are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub filter_widths: Vec<Vec<usize>>,
    pub feature_maps: Vec<Vec<usize>>,
    pub k_top: Vec<usize>,
    pub dropout_p: Vec<f64>,
    pub fold_layers: Vec<Vec<usize>>,
    pub learning_rate: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            filter_widths: vec![vec![7, 5, 5], vec![5, 3, 3], vec![9, 7, 5]],
            feature_maps: vec![vec![2, 2, 2], vec![3, 3, 3]],
            k_top: vec![4, 8, 12],
            dropout_p: vec![0.0, 0.3, 0.5],
            fold_layers: vec![vec![3], vec![2, 3]],
            learning_rate: vec![0.003, 0.01, 0.03],
        }
    }
}

impl SearchSpace {
    fn dims(&self) -> [usize; 6] {
        [
            self.filter_widths.len(),
            self.feature_maps.len(),
            self.k_top.len(),
            self.dropout_p.len(),
            self.fold_layers.len(),
            self.learning_rate.len(),
        ]
    }

    /// Number of combinations, `None` on overflow.
    pub fn size(&self) -> Option<usize> {
        self.dims().iter().try_fold(1usize, |a, &d| a.checked_mul(d))
    }

    /// Decode a mixed-radix index into a candidate built on `base`.
    pub fn candidate(&self, mut i: usize, base: &ModelConfig, optim: &OptimConfig) -> (ModelConfig, OptimConfig) {
        let mut pick = |n: usize| {
            let k = i % n;
            i /= n;
            k
        };
        let [a, b, c, d, e, f] = self.dims().map(&mut pick);
        let widths = self.filter_widths[a].clone();
        let cfg = ModelConfig {
            layers: widths.len(),
            filter_widths: widths,
            feature_maps: self.feature_maps[b].clone(),
            k_top: self.k_top[c],
            dropout_p: self.dropout_p[d],
            fold_layers: self.fold_layers[e].clone(),
            ..base.clone()
        };
        let opt = OptimConfig {
            learning_rate: self.learning_rate[f],
            ..optim.clone()
        };
        (cfg, opt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: ModelConfig,
    pub optim: OptimConfig,
    /// `None` when the candidate was invalid or failed to train.
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: usize,
    pub trials: Vec<Trial>,
}

impl SearchOutcome {
    pub fn winner(&self) -> &Trial {
        &self.trials[self.best]
    }
}

/// Score `trials` distinct candidates, visited in a seeded random order,
/// with `score`. The best score wins; ties go to the earlier trial.
pub fn random_search_with(
    space: &SearchSpace,
    base: &ModelConfig,
    optim: &OptimConfig,
    trials: usize,
    seed: u64,
    mut score: impl FnMut(&ModelConfig, &OptimConfig) -> Result<f64, DcnnError>,
) -> Result<SearchOutcome, DcnnError> {
    let size = match space.size() {
        Some(0) => return Err(DcnnError::EmptySpace),
        Some(n) => n,
        None => return Err(DcnnError::Config("search space too large".into())),
    };
    let picks = index::sample(&mut rng::rng(seed), size, trials.min(size));
    let mut out = Vec::with_capacity(picks.len());
    let mut best: Option<(usize, f64)> = None;
    for (t, i) in picks.into_iter().enumerate() {
        let (config, optim) = space.candidate(i, base, optim);
        let result = config.validate().and_then(|_| score(&config, &optim));
        let (accuracy, error) = match result {
            Ok(a) => (Some(a), None),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(a) = accuracy {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((t, a));
            }
        }
        out.push(Trial {
            index: i,
            config,
            optim,
            accuracy,
            error,
        });
    }
    let (best, _) = best.ok_or(DcnnError::NoViableTrial)?;
    Ok(SearchOutcome { best, trials: out })
}

/// Train every sampled candidate for `probe_epochs` and keep the one with
/// the best test accuracy.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    space: &SearchSpace,
    base: &ModelConfig,
    optim: &OptimConfig,
    train_set: &[Example],
    test_set: &[Example],
    trials: usize,
    probe_epochs: usize,
    seed: u64,
) -> Result<SearchOutcome, DcnnError> {
    random_search_with(space, base, optim, trials, seed, |cfg, opt| {
        let probe = OptimConfig {
            epochs: probe_epochs,
            ..opt.clone()
        };
        train(train_set, test_set, cfg, &probe).map(|(_, r)| r.test_accuracy)
    })
}
