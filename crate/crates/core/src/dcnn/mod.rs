//! Dynamic convolutional network with hand-written gradients.
//!
//! Each layer applies a wide convolution, optional folding, dynamic k-max
//! pooling and `tanh`. The last layer's pooled maps feed a softmax classifier.

mod checkpoint;
mod layers;
mod model;
mod search;
mod train;

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::rng;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use layers::{
    cross_entropy, dynamic_k, fold, fold_backward, kmax_pool, softmax, wide_conv, wide_conv_backward,
    wide_conv_param_grads, ConvShape, Maps,
};
pub use model::{backward, forward, loss_and_grad, predict, Cache};
pub use search::{random_search, random_search_with, SearchOutcome, SearchSpace, Trial};
pub use train::{evaluate, stratified_split, train, train_with, EpochStats, Example, OptimConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DcnnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("cannot fold {0} rows")]
    OddFold(usize),
    #[error("input has {got} rows, model expects {want}")]
    RowMismatch { got: usize, want: usize },
    #[error("input has no columns")]
    EmptyInput,
    #[error("label {0} out of range")]
    BadLabel(usize),
    #[error("parameter shapes do not match the config")]
    ParamShape,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("loss became non-finite in epoch {epoch} (batch {batch})")]
    Diverged { epoch: usize, batch: usize },
    #[error("empty search space")]
    EmptySpace,
    #[error("no trial produced a usable config")]
    NoViableTrial,
}

/// Elementwise preprocessing of the sentence matrix before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputTransform {
    Raw,
    /// `ln(1 + x)`; keeps long loop counts from saturating the first `tanh`.
    #[default]
    Log1p,
}

impl InputTransform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            InputTransform::Raw => v,
            InputTransform::Log1p => v.ln_1p(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input rows.
    pub d: usize,
    /// Number of convolutional layers.
    pub layers: usize,
    pub filter_widths: Vec<usize>,
    pub feature_maps: Vec<usize>,
    pub k_top: usize,
    pub dropout_p: f64,
    pub classes: usize,
    /// 1-based layer indices; a repeated index folds that many times there.
    pub fold_layers: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub input_transform: InputTransform,
}

/// Rows and columns after each layer for a given input length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapePlan {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub fc_inputs: usize,
}

impl ModelConfig {
    /// Three layers sized for a single core.
    pub fn desk(classes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            d: 12,
            layers: 3,
            filter_widths: vec![7, 5, 5],
            feature_maps: vec![2, 2, 2],
            k_top: 8,
            dropout_p: 0.3,
            classes,
            fold_layers: vec![3],
            seed,
            input_transform: InputTransform::Log1p,
        }
    }

    /// Fourteen layers: widths 20, twelve of 10, then 12; two folds composed
    /// at layer 13; `k_top` 56; eight outputs.
    pub fn full(seed: u64) -> ModelConfig {
        let mut widths = vec![20];
        widths.extend([10; 12]);
        widths.push(12);
        ModelConfig {
            d: 12,
            layers: 14,
            filter_widths: widths,
            feature_maps: vec![2; 14],
            k_top: 56,
            dropout_p: 0.6,
            classes: 8,
            fold_layers: vec![13, 13],
            seed,
            input_transform: InputTransform::Log1p,
        }
    }

    fn folds_at(&self, l: usize) -> usize {
        self.fold_layers.iter().filter(|&&f| f == l).count()
    }

    /// Check every invariant and the row algebra.
    pub fn validate(&self) -> Result<(), DcnnError> {
        let bad = |m: String| Err(DcnnError::Config(m));
        if self.layers == 0 {
            return bad("need at least one layer".into());
        }
        if self.filter_widths.len() != self.layers || self.feature_maps.len() != self.layers {
            return bad(format!(
                "{} layers but {} widths and {} map counts",
                self.layers,
                self.filter_widths.len(),
                self.feature_maps.len()
            ));
        }
        if self.filter_widths.contains(&0) {
            return bad("filter widths must be positive".into());
        }
        if self.feature_maps.contains(&0) {
            return bad("feature map counts must be positive".into());
        }
        if self.k_top == 0 {
            return bad("k_top must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout_p));
        }
        if self.classes < 2 {
            return bad("need at least two classes".into());
        }
        if let Some(&l) = self.fold_layers.iter().find(|&&l| l == 0 || l > self.layers) {
            return bad(format!("fold at layer {l} outside 1..={}", self.layers));
        }
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        let mut rows = self.d;
        for l in 1..=self.layers {
            for _ in 0..self.folds_at(l) {
                if !rows.is_multiple_of(2) {
                    return bad(format!("layer {l} folds {rows} rows"));
                }
                rows /= 2;
            }
        }
        Ok(())
    }

    /// Shapes after each layer for an `s`-column input.
    pub fn plan(&self, s: usize) -> Result<ShapePlan, DcnnError> {
        self.validate()?;
        let mut rows = Vec::with_capacity(self.layers);
        let mut cols = Vec::with_capacity(self.layers);
        let mut r = self.d;
        for l in 1..=self.layers {
            r >>= self.folds_at(l);
            rows.push(r);
            cols.push(dynamic_k(l, self.layers, s, self.k_top));
        }
        Ok(ShapePlan {
            fc_inputs: self.feature_maps[self.layers - 1] * r * self.k_top,
            rows,
            cols,
        })
    }

    /// Convolution shapes, layer by layer.
    pub fn conv_shapes(&self) -> Vec<ConvShape> {
        let mut rows = self.d;
        let mut maps_in = 1;
        (0..self.layers)
            .map(|i| {
                let sh = ConvShape {
                    maps_out: self.feature_maps[i],
                    maps_in,
                    rows,
                    width: self.filter_widths[i],
                };
                rows >>= self.folds_at(i + 1);
                maps_in = self.feature_maps[i];
                sh
            })
            .collect()
    }

    pub fn fc_inputs(&self) -> usize {
        let rows = self.d >> self.fold_layers.len();
        self.feature_maps[self.layers - 1] * rows * self.k_top
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub shape: ConvShape,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// All learnable tensors. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv: Vec<ConvParams>,
    /// `classes x fc_inputs`, row-major.
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> ModelParams {
        ModelParams {
            conv: cfg
                .conv_shapes()
                .into_iter()
                .map(|shape| ConvParams {
                    shape,
                    kernel: vec![0.0; shape.kernel_len()],
                    bias: vec![0.0; shape.bias_len()],
                })
                .collect(),
            fc_w: vec![0.0; cfg.classes * cfg.fc_inputs()],
            fc_b: vec![0.0; cfg.classes],
        }
    }

    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))` per tensor, zero biases.
    pub fn init(cfg: &ModelConfig) -> Result<ModelParams, DcnnError> {
        cfg.validate()?;
        let mut p = ModelParams::zeros(cfg);
        let mut r = rng::child(cfg.seed, 0);
        let mut fill = |xs: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a);
            for x in xs {
                *x = u.sample(&mut r);
            }
        };
        for c in &mut p.conv {
            let sh = c.shape;
            fill(&mut c.kernel, sh.maps_in * sh.width, sh.maps_out * sh.width);
        }
        fill(&mut p.fc_w, cfg.fc_inputs(), cfg.classes);
        Ok(p)
    }

    /// Every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for c in &self.conv {
            v.push(&c.kernel);
            v.push(&c.bias);
        }
        v.push(&self.fc_w);
        v.push(&self.fc_b);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.conv {
            v.push(&mut c.kernel);
            v.push(&mut c.bias);
        }
        v.push(&mut self.fc_w);
        v.push(&mut self.fc_b);
        v
    }

    pub fn matches(&self, cfg: &ModelConfig) -> bool {
        let z = ModelParams::zeros(cfg);
        self.conv.len() == z.conv.len()
            && self.tensors().iter().zip(z.tensors()).all(|(a, b)| a.len() == b.len())
            && self.conv.iter().zip(&z.conv).all(|(a, b)| a.shape == b.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &ModelParams) {
        for (x, y) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (p, q) in x.iter_mut().zip(y) {
                *p += a * q;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for t in self.tensors_mut() {
            for v in t {
                *v *= a;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        let desk = ModelConfig::desk(6, 1);
        desk.validate().unwrap();
        let plan = desk.plan(700).unwrap();
        assert_eq!(plan.rows, vec![12, 12, 6]);
        assert_eq!(plan.cols, vec![467, 234, 8]);
        assert_eq!(plan.fc_inputs, 2 * 6 * 8);

        let full = ModelConfig::full(1);
        full.validate().unwrap();
        assert_eq!(full.filter_widths.len(), 14);
        assert_eq!((full.filter_widths[0], full.filter_widths[13]), (20, 12));
        assert!(full.filter_widths[1..13].iter().all(|&w| w == 10));
        let plan = full.plan(2000).unwrap();
        assert_eq!(plan.rows[11], 12);
        assert_eq!(plan.rows[12], 3);
        assert_eq!(*plan.cols.last().unwrap(), 56);
        assert_eq!(plan.fc_inputs, 2 * 3 * 56);
        let p = ModelParams::init(&full).unwrap();
        assert_eq!(p.fc_w.len(), 8 * 2 * 3 * 56);
        assert!(p.matches(&full));
    }

    #[test]
    fn invalid_configs() {
        let base = ModelConfig::desk(6, 1);
        type Edit = Box<dyn Fn(&mut ModelConfig)>;
        let cases: Vec<Edit> = vec![
            Box::new(|c| c.k_top = 0),
            Box::new(|c| c.dropout_p = 1.0),
            Box::new(|c| c.classes = 1),
            Box::new(|c| c.filter_widths[1] = 0),
            Box::new(|c| c.feature_maps.pop().map(drop).unwrap_or(())),
            Box::new(|c| c.fold_layers = vec![3, 3, 3]),
            Box::new(|c| c.fold_layers = vec![4]),
            Box::new(|c| c.d = 6),
        ];
        for (i, f) in cases.iter().enumerate() {
            let mut c = base.clone();
            f(&mut c);
            if i == 7 {
                // 6 rows fold once to 3: still valid.
                assert!(c.validate().is_ok());
                c.fold_layers = vec![2, 3];
            }
            assert!(matches!(c.validate(), Err(DcnnError::Config(_))), "case {i}");
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::desk(6, 9);
        let a = ModelParams::init(&cfg).unwrap();
        assert_eq!(a, ModelParams::init(&cfg).unwrap());
        let other = ModelConfig {
            seed: 10,
            ..cfg.clone()
        };
        assert_ne!(a, ModelParams::init(&other).unwrap());
        let bound = (6.0f64 / (7 + 14) as f64).sqrt();
        assert!(a.conv[0].kernel.iter().all(|v| v.abs() <= bound));
        assert!(a.conv.iter().all(|c| c.bias.iter().all(|&b| b == 0.0)));
    }
}
