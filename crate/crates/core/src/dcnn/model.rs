//! Forward pass, cached activations and backpropagation.

use rand::Rng as _;

use crate::features::SentenceMatrix;
use crate::rng::Rng;

use super::layers::{
    cross_entropy, dynamic_k, fold, fold_backward, kmax_pool, softmax, wide_conv, wide_conv_backward,
    wide_conv_param_grads, Maps,
};
use super::{DcnnError, ModelConfig, ModelParams};

#[derive(Debug, Clone)]
struct LayerCache {
    folds: usize,
    /// Shape after folding, before pooling.
    rows: usize,
    conv_len: usize,
    /// Selected columns per (map, row).
    picks: Vec<Vec<usize>>,
    /// `tanh` of the pooled values.
    act: Maps,
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input of each convolution; entry 0 is the transformed sentence matrix.
    inputs: Vec<Maps>,
    layers: Vec<LayerCache>,
    /// Dropout multipliers applied to the first layer's output.
    mask: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Some pooling saw fewer than `k` columns and zero-filled the rest.
    pub padded: bool,
}

impl Cache {
    /// Flattened input of the fully-connected layer.
    pub fn features(&self) -> &[f64] {
        &self.layers.last().expect("at least one layer").act.data
    }

    /// Pooled selections at a layer, per (map, row).
    pub fn picks(&self, layer: usize) -> &[Vec<usize>] {
        &self.layers[layer].picks
    }
}

/// Run the network. Passing an RNG selects training mode, which enables dropout.
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    x: &SentenceMatrix,
    train: Option<&mut Rng>,
) -> Result<Cache, DcnnError> {
    if x.d != cfg.d {
        return Err(DcnnError::RowMismatch { got: x.d, want: cfg.d });
    }
    if x.s == 0 {
        return Err(DcnnError::EmptyInput);
    }
    if params.conv.len() != cfg.layers {
        return Err(DcnnError::ParamShape);
    }
    let s = x.s;
    let input = Maps {
        maps: 1,
        rows: x.d,
        len: s,
        data: x.values.iter().map(|&v| cfg.input_transform.apply(v)).collect(),
    };
    let mut inputs = vec![input];
    let mut layers = Vec::with_capacity(cfg.layers);
    let mut mask = None;
    let mut padded = false;
    let mut train = train;
    for (li, cp) in params.conv.iter().enumerate() {
        let l = li + 1;
        let x_in = inputs.last().expect("input present");
        if x_in.rows != cp.shape.rows || x_in.maps != cp.shape.maps_in {
            return Err(DcnnError::ParamShape);
        }
        let mut c = wide_conv(x_in, cp.shape, &cp.kernel, &cp.bias);
        let conv_len = c.len;
        let folds = cfg.fold_layers.iter().filter(|&&f| f == l).count();
        for _ in 0..folds {
            c = fold(&c)?;
        }
        let k = dynamic_k(l, cfg.layers, s, cfg.k_top);
        padded |= c.len < k;
        let mut act = Maps::zeros(c.maps, c.rows, k);
        let mut picks = Vec::with_capacity(c.maps * c.rows);
        for m in 0..c.maps {
            for r in 0..c.rows {
                let (vals, idx) = kmax_pool(c.row(m, r), k);
                for (o, v) in act.row_mut(m, r).iter_mut().zip(vals) {
                    *o = v.tanh();
                }
                picks.push(idx);
            }
        }
        let mut next = act.clone();
        if l == 1 && cfg.dropout_p > 0.0 {
            if let Some(r) = train.as_deref_mut() {
                // One draw per (map, row): per-element masks in front of the next
                // k-max pooling inflate the training-time maxima.
                let keep = 1.0 / (1.0 - cfg.dropout_p);
                let m: Vec<f64> = (0..next.maps * next.rows)
                    .flat_map(|_| {
                        let f = if r.gen_bool(cfg.dropout_p) { 0.0 } else { keep };
                        std::iter::repeat_n(f, next.len)
                    })
                    .collect();
                for (v, f) in next.data.iter_mut().zip(&m) {
                    *v *= f;
                }
                mask = Some(m);
            }
        }
        layers.push(LayerCache {
            folds,
            rows: c.rows,
            conv_len,
            picks,
            act,
        });
        inputs.push(next);
    }
    let h = inputs.pop().expect("final activation");
    let f = h.data.len();
    if params.fc_w.len() != cfg.classes * f || params.fc_b.len() != cfg.classes {
        return Err(DcnnError::ParamShape);
    }
    let logits: Vec<f64> = (0..cfg.classes)
        .map(|c| {
            params.fc_b[c]
                + params.fc_w[c * f..(c + 1) * f]
                    .iter()
                    .zip(&h.data)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
        })
        .collect();
    let probs = softmax(&logits);
    Ok(Cache {
        inputs,
        layers,
        mask,
        logits,
        probs,
        padded,
    })
}

/// Cross-entropy loss and gradients for every parameter, plus the gradient
/// with respect to the (transformed) input.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &Cache,
    target: usize,
) -> Result<(f64, ModelParams, Maps), DcnnError> {
    let (loss, g, dx) = backward_inner(params, cfg, cache, target, true)?;
    Ok((loss, g, dx.expect("input gradient requested")))
}

fn backward_inner(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &Cache,
    target: usize,
    input_grad: bool,
) -> Result<(f64, ModelParams, Option<Maps>), DcnnError> {
    if target >= cfg.classes {
        return Err(DcnnError::BadLabel(target));
    }
    let loss = cross_entropy(&cache.logits, target);
    let mut g = ModelParams::zeros(cfg);
    let h = cache.features();
    let f = h.len();
    let mut dz = cache.probs.clone();
    dz[target] -= 1.0;
    let mut dh = vec![0.0; f];
    for (c, &d) in dz.iter().enumerate() {
        g.fc_b[c] = d;
        let w = &params.fc_w[c * f..(c + 1) * f];
        for (j, (gw, &hv)) in g.fc_w[c * f..(c + 1) * f].iter_mut().zip(h).enumerate() {
            *gw = d * hv;
            dh[j] += w[j] * d;
        }
    }

    let last = cache.layers.last().expect("at least one layer");
    let mut d_out = Maps {
        maps: last.act.maps,
        rows: last.act.rows,
        len: last.act.len,
        data: dh,
    };
    for li in (0..cache.layers.len()).rev() {
        let lc = &cache.layers[li];
        if li == 0 {
            if let Some(m) = &cache.mask {
                for (d, f) in d_out.data.iter_mut().zip(m) {
                    *d *= f;
                }
            }
        }
        let mut d_fold = Maps::zeros(lc.act.maps, lc.rows, lc.conv_len);
        for m in 0..lc.act.maps {
            for r in 0..lc.rows {
                let a = lc.act.row(m, r);
                let da = d_out.row(m, r);
                let row = d_fold.row_mut(m, r);
                for (j, &col) in lc.picks[m * lc.rows + r].iter().enumerate() {
                    row[col] = da[j] * (1.0 - a[j] * a[j]);
                }
            }
        }
        for _ in 0..lc.folds {
            d_fold = fold_backward(&d_fold);
        }
        let cp = &params.conv[li];
        if li == 0 && !input_grad {
            let (dk, db) = wide_conv_param_grads(&cache.inputs[li], cp.shape, &d_fold);
            g.conv[li].kernel = dk;
            g.conv[li].bias = db;
            return Ok((loss, g, None));
        }
        let (dx, dk, db) = wide_conv_backward(&cache.inputs[li], cp.shape, &cp.kernel, &d_fold);
        g.conv[li].kernel = dk;
        g.conv[li].bias = db;
        d_out = dx;
    }
    Ok((loss, g, Some(d_out)))
}

/// One forward and backward pass.
pub fn loss_and_grad(
    params: &ModelParams,
    cfg: &ModelConfig,
    x: &SentenceMatrix,
    target: usize,
    train: Option<&mut Rng>,
) -> Result<(f64, ModelParams), DcnnError> {
    let cache = forward(params, cfg, x, train)?;
    let (loss, g, _) = backward_inner(params, cfg, &cache, target, false)?;
    Ok((loss, g))
}

/// Class probabilities in evaluation mode.
pub fn predict(params: &ModelParams, cfg: &ModelConfig, x: &SentenceMatrix) -> Result<Vec<f64>, DcnnError> {
    Ok(forward(params, cfg, x, None)?.probs)
}
