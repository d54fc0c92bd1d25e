//! Individual layers and their gradients.

use super::DcnnError;

/// A stack of `maps` matrices, each `rows x len`, stored map-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Maps {
    pub maps: usize,
    pub rows: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Maps {
    pub fn zeros(maps: usize, rows: usize, len: usize) -> Maps {
        Maps {
            maps,
            rows,
            len,
            data: vec![0.0; maps * rows * len],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Maps {
        let len = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == len), "ragged rows");
        Maps {
            maps: 1,
            rows: rows.len(),
            len,
            data: rows.concat(),
        }
    }

    pub fn row(&self, map: usize, row: usize) -> &[f64] {
        let o = (map * self.rows + row) * self.len;
        &self.data[o..o + self.len]
    }

    pub fn row_mut(&mut self, map: usize, row: usize) -> &mut [f64] {
        let o = (map * self.rows + row) * self.len;
        &mut self.data[o..o + self.len]
    }
}

/// Kernel layout `[out][in][row][u]`; bias layout `[out][row]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub maps_out: usize,
    pub maps_in: usize,
    pub rows: usize,
    pub width: usize,
}

impl ConvShape {
    pub fn kernel_len(&self) -> usize {
        self.maps_out * self.maps_in * self.rows * self.width
    }

    pub fn bias_len(&self) -> usize {
        self.maps_out * self.rows
    }

    fn k(&self, o: usize, i: usize, r: usize) -> usize {
        ((o * self.maps_in + i) * self.rows + r) * self.width
    }
}

/// Full one-dimensional convolution along each row: `y[t] = sum_u w[u] x[t-u]`,
/// zero outside `0..len`, so the output has `len + width - 1` columns.
pub fn wide_conv(x: &Maps, shape: ConvShape, kernel: &[f64], bias: &[f64]) -> Maps {
    debug_assert_eq!((x.maps, x.rows), (shape.maps_in, shape.rows));
    let m = shape.width;
    let mut y = Maps::zeros(shape.maps_out, shape.rows, x.len + m - 1);
    for o in 0..shape.maps_out {
        for r in 0..shape.rows {
            let out = y.row_mut(o, r);
            out.fill(bias[o * shape.rows + r]);
            for i in 0..shape.maps_in {
                let w = &kernel[shape.k(o, i, r)..][..m];
                let xr = x.row(i, r);
                for (u, &wv) in w.iter().enumerate() {
                    for (acc, &xv) in out[u..u + x.len].iter_mut().zip(xr) {
                        *acc += wv * xv;
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`wide_conv`] with respect to input, kernel and bias.
pub fn wide_conv_backward(x: &Maps, shape: ConvShape, kernel: &[f64], dy: &Maps) -> (Maps, Vec<f64>, Vec<f64>) {
    let (dk, db) = wide_conv_param_grads(x, shape, dy);
    let m = shape.width;
    let mut dx = Maps::zeros(x.maps, x.rows, x.len);
    for o in 0..shape.maps_out {
        for r in 0..shape.rows {
            let g = dy.row(o, r);
            for i in 0..shape.maps_in {
                let base = shape.k(o, i, r);
                let dxr = dx.row_mut(i, r);
                for (u, &wv) in kernel[base..base + m].iter().enumerate() {
                    for (d, &gv) in dxr.iter_mut().zip(&g[u..u + x.len]) {
                        *d += wv * gv;
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

/// Kernel and bias gradients only, for the first layer where the input
/// gradient is not needed.
pub fn wide_conv_param_grads(x: &Maps, shape: ConvShape, dy: &Maps) -> (Vec<f64>, Vec<f64>) {
    let mut dk = vec![0.0; shape.kernel_len()];
    let mut db = vec![0.0; shape.bias_len()];
    for o in 0..shape.maps_out {
        for r in 0..shape.rows {
            let g = dy.row(o, r);
            db[o * shape.rows + r] = g.iter().sum();
            for i in 0..shape.maps_in {
                let base = shape.k(o, i, r);
                let xr = x.row(i, r);
                for u in 0..shape.width {
                    dk[base + u] = g[u..u + x.len].iter().zip(xr).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
    (dk, db)
}

/// Pool size at layer `l` of `big_l`: `max(k_top, ceil((L - l) / L * s))`.
pub fn dynamic_k(l: usize, big_l: usize, s: usize, k_top: usize) -> usize {
    assert!(l >= 1 && l <= big_l, "layer {l} outside 1..={big_l}");
    let num = (big_l - l) * s;
    k_top.max(num.div_ceil(big_l))
}

/// The `k` largest entries in their original order, ties to the earlier
/// index, plus their positions. Short rows yield fewer than `k` indices and
/// the values are zero-padded at the tail.
pub fn kmax_pool(row: &[f64], k: usize) -> (Vec<f64>, Vec<usize>) {
    let idx: Vec<usize> = if row.len() <= k {
        (0..row.len()).collect()
    } else if k == 0 {
        Vec::new()
    } else {
        // The k-th largest value splits the row: everything above it is kept,
        // and ties at it are taken from the left until k are chosen.
        let mut sorted = row.to_vec();
        let (_, &mut thr, _) = sorted.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
        let above = row.iter().filter(|v| v.total_cmp(&thr).is_gt()).count();
        let mut ties = k - above;
        let mut idx = Vec::with_capacity(k);
        for (i, v) in row.iter().enumerate() {
            match v.total_cmp(&thr) {
                std::cmp::Ordering::Greater => idx.push(i),
                std::cmp::Ordering::Equal if ties > 0 => {
                    ties -= 1;
                    idx.push(i);
                }
                _ => {}
            }
        }
        idx
    };
    let mut vals: Vec<f64> = idx.iter().map(|&i| row[i]).collect();
    vals.resize(k, 0.0);
    (vals, idx)
}

/// Sum adjacent row pairs: row `i` of the result is rows `2i` and `2i+1`.
pub fn fold(x: &Maps) -> Result<Maps, DcnnError> {
    if !x.rows.is_multiple_of(2) {
        return Err(DcnnError::OddFold(x.rows));
    }
    let mut y = Maps::zeros(x.maps, x.rows / 2, x.len);
    for m in 0..x.maps {
        for r in 0..y.rows {
            let (a, b) = (x.row(m, 2 * r), x.row(m, 2 * r + 1));
            for ((o, &p), &q) in y.row_mut(m, r).iter_mut().zip(a).zip(b) {
                *o = p + q;
            }
        }
    }
    Ok(y)
}

/// Each output gradient flows unchanged to both source rows.
pub fn fold_backward(dy: &Maps) -> Maps {
    let mut dx = Maps::zeros(dy.maps, dy.rows * 2, dy.len);
    for m in 0..dy.maps {
        for r in 0..dy.rows {
            let g = dy.row(m, r).to_vec();
            dx.row_mut(m, 2 * r).copy_from_slice(&g);
            dx.row_mut(m, 2 * r + 1).copy_from_slice(&g);
        }
    }
    dx
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// `-ln p[target]`, computed from logits for stability.
pub fn cross_entropy(z: &[f64], target: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[target]
}
