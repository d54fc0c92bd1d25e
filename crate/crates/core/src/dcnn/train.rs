//! Mini-batch gradient descent with momentum.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::SentenceMatrix;
use crate::rng;

use super::model::{loss_and_grad, predict};
use super::{DcnnError, ModelConfig, ModelParams};

/// A sentence matrix with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: SentenceMatrix,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Rescale each batch gradient to at most this norm.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            epochs: 200,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Starts at 1.
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch.
    pub loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// `confusion[actual][predicted]` on the test split after the last epoch.
    pub confusion: Vec<Vec<u64>>,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// `epoch,loss,test_accuracy` with one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,test_accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.loss, e.test_accuracy));
        }
        s
    }
}

/// Predicted class of every example and the resulting confusion matrix.
/// Runs in parallel; the result does not depend on scheduling.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    data: &[Example],
) -> Result<(Vec<usize>, Vec<Vec<u64>>), DcnnError> {
    let preds = data
        .par_iter()
        .map(|e| predict(params, cfg, &e.x).map(|p| argmax(&p)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut confusion = vec![vec![0u64; cfg.classes]; cfg.classes];
    for (e, &p) in data.iter().zip(&preds) {
        if e.y >= cfg.classes {
            return Err(DcnnError::BadLabel(e.y));
        }
        confusion[e.y][p] += 1;
    }
    Ok((preds, confusion))
}

/// Index of the largest entry, earliest on ties.
pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn accuracy(confusion: &[Vec<u64>]) -> f64 {
    let total: u64 = confusion.iter().flatten().sum();
    let hits: u64 = confusion.iter().enumerate().map(|(i, r)| r[i]).sum();
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Split indices per class: a seeded shuffle, then the first `train_frac`
/// (rounded) of each class goes to training. Classes with two or more
/// members keep at least one on each side. Both lists come back sorted.
pub fn stratified_split(labels: &[usize], train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng::child(seed, c as u64));
        let n = idx.len();
        let mut k = (train_frac * n as f64).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        }
        train.extend_from_slice(&idx[..k.min(n)]);
        test.extend_from_slice(&idx[k.min(n)..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

pub fn train(
    train_set: &[Example],
    test_set: &[Example],
    cfg: &ModelConfig,
    optim: &OptimConfig,
) -> Result<(ModelParams, TrainReport), DcnnError> {
    train_with(train_set, test_set, cfg, optim, |_| {})
}

/// [`train`], calling `on_epoch` after each epoch.
pub fn train_with(
    train_set: &[Example],
    test_set: &[Example],
    cfg: &ModelConfig,
    optim: &OptimConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(ModelParams, TrainReport), DcnnError> {
    let start = Instant::now();
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(DcnnError::EmptySplit("training"));
    }
    if test_set.is_empty() {
        return Err(DcnnError::EmptySplit("test"));
    }
    if let Some(e) = train_set.iter().chain(test_set).find(|e| e.y >= cfg.classes) {
        return Err(DcnnError::BadLabel(e.y));
    }
    if let Some(e) = train_set.iter().chain(test_set).find(|e| e.x.d != cfg.d) {
        return Err(DcnnError::RowMismatch {
            got: e.x.d,
            want: cfg.d,
        });
    }
    let mut params = ModelParams::init(cfg)?;
    let mut velocity = ModelParams::zeros(cfg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = rng::child(cfg.seed, 1);
    let mut dropout_rng = rng::child(cfg.seed, 2);
    let batch = optim.batch_size.max(1);
    let mut epochs = Vec::with_capacity(optim.epochs);

    for epoch in 1..=optim.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(batch).enumerate() {
            let mut grad = ModelParams::zeros(cfg);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let e = &train_set[i];
                let (l, g) = loss_and_grad(&params, cfg, &e.x, e.y, Some(&mut dropout_rng))?;
                batch_loss += l;
                grad.axpy(1.0, &g);
            }
            if !batch_loss.is_finite() {
                return Err(DcnnError::Diverged { epoch, batch: bi });
            }
            total += batch_loss;
            grad.scale(1.0 / chunk.len() as f64);
            if let Some(c) = optim.clip_norm {
                let n = grad.norm();
                if n > c {
                    grad.scale(c / n);
                }
            }
            velocity.scale(optim.momentum);
            velocity.axpy(-optim.learning_rate, &grad);
            params.axpy(1.0, &velocity);
            if !params.is_finite() {
                return Err(DcnnError::Diverged { epoch, batch: bi });
            }
        }
        let (_, confusion) = evaluate(&params, cfg, test_set)?;
        let stats = EpochStats {
            epoch,
            loss: total / train_set.len() as f64,
            test_accuracy: accuracy(&confusion),
        };
        on_epoch(&stats);
        epochs.push(stats);
    }

    let (_, confusion) = evaluate(&params, cfg, test_set)?;
    let report = TrainReport {
        epochs,
        test_accuracy: accuracy(&confusion),
        confusion,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::super::InputTransform;
    use super::*;
    use rand::Rng as _;

    fn small_cfg(seed: u64) -> ModelConfig {
        ModelConfig {
            d: 4,
            layers: 2,
            filter_widths: vec![3, 2],
            feature_maps: vec![2, 2],
            k_top: 3,
            dropout_p: 0.0,
            classes: 2,
            fold_layers: vec![2],
            seed,
            input_transform: InputTransform::Raw,
        }
    }

    /// Class 0 is active on the top two rows, class 1 on the bottom two.
    fn toy(n: usize, seed: u64) -> Vec<Example> {
        let mut r = rng::rng(seed);
        (0..n)
            .map(|i| {
                let y = i % 2;
                let s = r.gen_range(4..12);
                let mut values = vec![0.0; 4 * s];
                for row in 0..4 {
                    let hot = (row < 2) == (y == 0);
                    for t in 0..s {
                        values[row * s + t] = if hot {
                            r.gen_range(0.5..1.0)
                        } else {
                            r.gen_range(0.0..0.1)
                        };
                    }
                }
                Example {
                    x: SentenceMatrix {
                        d: 4,
                        s,
                        values,
                        label: None,
                        truncated: false,
                    },
                    y,
                }
            })
            .collect()
    }

    fn opt(epochs: usize) -> OptimConfig {
        OptimConfig {
            epochs,
            batch_size: 8,
            learning_rate: 0.05,
            ..Default::default()
        }
    }

    #[test]
    fn separable_toy_is_learned() {
        let data = toy(64, 1);
        let cfg = small_cfg(3);
        let (p, report) = train(&data, &toy(16, 2), &cfg, &opt(50)).unwrap();
        let (_, confusion) = evaluate(&p, &cfg, &data).unwrap();
        assert!(accuracy(&confusion) >= 0.99, "{confusion:?}");
        assert_eq!(report.epochs.len(), 50);
        assert!(report.epochs[49].loss < report.epochs[0].loss);
        let rows: Vec<u64> = report.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(rows, vec![8, 8]);
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy(32, 4);
        let test = toy(8, 5);
        let cfg = ModelConfig {
            dropout_p: 0.3,
            ..small_cfg(6)
        };
        let (a, ra) = train(&data, &test, &cfg, &opt(5)).unwrap();
        let (b, rb) = train(&data, &test, &cfg, &opt(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.to_csv(), rb.to_csv());
        let (c, _) = train(&data, &test, &small_cfg(7), &opt(5)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let cfg = small_cfg(8);
        let (p, report) = train(&toy(8, 1), &toy(8, 2), &cfg, &opt(0)).unwrap();
        assert_eq!(p, ModelParams::init(&cfg).unwrap());
        assert!(report.epochs.is_empty());
        assert_eq!(report.to_csv(), "epoch,loss,test_accuracy\n");
    }

    #[test]
    fn errors() {
        let cfg = small_cfg(1);
        assert_eq!(
            train(&[], &toy(4, 1), &cfg, &opt(1)).unwrap_err(),
            DcnnError::EmptySplit("training")
        );
        assert_eq!(
            train(&toy(4, 1), &[], &cfg, &opt(1)).unwrap_err(),
            DcnnError::EmptySplit("test")
        );
        let mut bad = toy(4, 1);
        bad[0].y = 5;
        assert_eq!(
            train(&bad, &toy(4, 1), &cfg, &opt(1)).unwrap_err(),
            DcnnError::BadLabel(5)
        );
        let mut poisoned = toy(16, 1);
        poisoned[3].x.values[0] = f64::NAN;
        assert!(matches!(
            train(&poisoned, &toy(4, 2), &cfg, &opt(1)),
            Err(DcnnError::Diverged { epoch: 1, .. })
        ));
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..750).map(|i| i % 6).collect();
        let (tr, te) = stratified_split(&labels, 0.75, 9);
        assert_eq!(tr.len() + te.len(), 750);
        for c in 0..6 {
            let n_tr = tr.iter().filter(|&&i| labels[i] == c).count();
            assert_eq!(n_tr, 94);
        }
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, (0..750).collect::<Vec<_>>());
        assert_eq!(stratified_split(&labels, 0.75, 9), (tr.clone(), te));
        assert_ne!(stratified_split(&labels, 0.75, 10).0, tr);
        assert_eq!(stratified_split(&[0, 0, 1, 1], 1.0, 0).1.len(), 2);
    }
}
