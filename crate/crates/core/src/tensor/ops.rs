//! Primitive operations and their backward rules.
//!
//! Every op computes its forward value eagerly and registers a closure that
//! maps the output gradient to per-parent gradient contributions. Closures
//! capture value snapshots (`Rc<Vec<f64>>`), never the tape itself.

use super::{numel, Tensor};
use std::rc::Rc;

// ── raw kernels ──────────────────────────────────────────────────────

/// C[m,n] = A[m,k] · B[k,n]
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += av * bj;
            }
        }
    }
    c
}

/// C[m,k] = A[m,n] · B[k,n]ᵀ
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C[k,n] = A[m,k]ᵀ · B[m,n]
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += av * bj;
            }
        }
    }
    c
}

fn dims2(shape: &[usize], op: &str) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "{op}: expected a 2-d tensor, got {shape:?}");
    (shape[0], shape[1])
}

// ── elementwise and shape ops ────────────────────────────────────────

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        self.assert_same_tape(other, "add");
        assert_eq!(
            self.shape, other.shape,
            "add: shape mismatch {:?} vs {:?}",
            self.shape, other.shape
        );
        let a = self.values();
        let b = other.values();
        let out: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
        let (ia, ib) = (self.id, other.id);
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                vec![(ia, g.to_vec()), (ib, g.to_vec())]
            })),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.assert_same_tape(other, "sub");
        assert_eq!(
            self.shape, other.shape,
            "sub: shape mismatch {:?} vs {:?}",
            self.shape, other.shape
        );
        let a = self.values();
        let b = other.values();
        let out: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
        let (ia, ib) = (self.id, other.id);
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                vec![(ia, g.to_vec()), (ib, g.iter().map(|x| -x).collect())]
            })),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.assert_same_tape(other, "mul");
        assert_eq!(
            self.shape, other.shape,
            "mul: shape mismatch {:?} vs {:?}",
            self.shape, other.shape
        );
        let a = self.values();
        let b = other.values();
        let out: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        let (ia, ib) = (self.id, other.id);
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                let ga: Vec<f64> = g.iter().zip(b.iter()).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = g.iter().zip(a.iter()).map(|(g, x)| g * x).collect();
                vec![(ia, ga), (ib, gb)]
            })),
        )
    }

    /// Broadcast-add a length-C row vector to every row of an (R, C) matrix.
    pub fn add_row(&self, row: &Tensor) -> Tensor {
        self.assert_same_tape(row, "add_row");
        let (r, c) = dims2(&self.shape, "add_row");
        assert_eq!(
            row.numel(),
            c,
            "add_row: row length {:?} does not match columns of {:?}",
            row.shape,
            self.shape
        );
        let a = self.values();
        let b = row.values();
        let mut out = a.as_ref().clone();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += b[j];
            }
        }
        let (ia, ib) = (self.id, row.id);
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                let mut grow = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        grow[j] += g[i * c + j];
                    }
                }
                vec![(ia, g.to_vec()), (ib, grow)]
            })),
        )
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let a = self.values();
        let out: Vec<f64> = a.iter().map(|x| x * factor).collect();
        let ia = self.id;
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                vec![(ia, g.iter().map(|x| x * factor).collect())]
            })),
        )
    }

    pub fn offset(&self, delta: f64) -> Tensor {
        let a = self.values();
        let out: Vec<f64> = a.iter().map(|x| x + delta).collect();
        let ia = self.id;
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| vec![(ia, g.to_vec())])),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        let a = self.values();
        let out: Vec<f64> = a.iter().map(|x| x.max(0.0)).collect();
        let ia = self.id;
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(a.iter())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(ia, ga)]
            })),
        )
    }

    pub fn tanh_op(&self) -> Tensor {
        let a = self.values();
        let out: Vec<f64> = a.iter().map(|x| x.tanh()).collect();
        let y = Rc::new(out.clone());
        let ia = self.id;
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                let ga: Vec<f64> = g.iter().zip(y.iter()).map(|(g, y)| g * (1.0 - y * y)).collect();
                vec![(ia, ga)]
            })),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let a = self.values();
        let out: Vec<f64> = a.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let y = Rc::new(out.clone());
        let ia = self.id;
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(y.iter())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                vec![(ia, ga)]
            })),
        )
    }

    /// Elementwise absolute value; subgradient 0 at exactly 0.
    pub fn abs_op(&self) -> Tensor {
        let a = self.values();
        let out: Vec<f64> = a.iter().map(|x| x.abs()).collect();
        let ia = self.id;
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(a.iter())
                    .map(|(g, x)| {
                        if *x > 0.0 {
                            *g
                        } else if *x < 0.0 {
                            -*g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(ia, ga)]
            })),
        )
    }

    pub fn ln(&self) -> Tensor {
        let a = self.values();
        let out: Vec<f64> = a.iter().map(|x| x.ln()).collect();
        let ia = self.id;
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                let ga: Vec<f64> = g.iter().zip(a.iter()).map(|(g, x)| g / x).collect();
                vec![(ia, ga)]
            })),
        )
    }

    /// Clamp into [lo, hi]; gradient passes only strictly inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        assert!(lo < hi, "clamp: lo {lo} must be < hi {hi}");
        let a = self.values();
        let out: Vec<f64> = a.iter().map(|x| x.max(lo).min(hi)).collect();
        let ia = self.id;
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(a.iter())
                    .map(|(g, x)| if *x > lo && *x < hi { *g } else { 0.0 })
                    .collect();
                vec![(ia, ga)]
            })),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.numel(),
            "reshape: cannot view {:?} as {:?}",
            self.shape,
            shape
        );
        let out = self.values().as_ref().clone();
        let ia = self.id;
        self.tape.push(
            shape.to_vec(),
            out,
            Some(Box::new(move |g| vec![(ia, g.to_vec())])),
        )
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = dims2(&self.shape, "transpose");
        let a = self.values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a[i * c + j];
            }
        }
        let ia = self.id;
        self.tape.push(
            vec![c, r],
            out,
            Some(Box::new(move |g| {
                let mut ga = vec![0.0; r * c];
                for j in 0..c {
                    for i in 0..r {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                vec![(ia, ga)]
            })),
        )
    }

    // ── reductions ───────────────────────────────────────────────────

    pub fn sum(&self) -> Tensor {
        let a = self.values();
        let total: f64 = a.iter().sum();
        let ia = self.id;
        let len = a.len();
        self.tape.push(
            vec![],
            vec![total],
            Some(Box::new(move |g| vec![(ia, vec![g[0]; len])])),
        )
    }

    pub fn mean(&self) -> Tensor {
        assert!(self.numel() > 0, "mean: empty tensor");
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    // ── linear algebra ───────────────────────────────────────────────

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.assert_same_tape(other, "matmul");
        let (m, k) = dims2(&self.shape, "matmul");
        let (k2, n) = dims2(&other.shape, "matmul");
        assert_eq!(
            k, k2,
            "matmul: inner dimensions do not conform, {:?} vs {:?}",
            self.shape, other.shape
        );
        let a = self.values();
        let b = other.values();
        let out = matmul_raw(&a, &b, m, k, n);
        let (ia, ib) = (self.id, other.id);
        self.tape.push(
            vec![m, n],
            out,
            Some(Box::new(move |g| {
                let ga = matmul_nt(g, &b, m, n, k);
                let gb = matmul_tn(&a, g, m, k, n);
                vec![(ia, ga), (ib, gb)]
            })),
        )
    }

    /// Softmax along `axis`; numerically stabilized by max subtraction.
    pub fn softmax(&self, axis: usize) -> Tensor {
        assert!(
            axis < self.shape.len(),
            "softmax: axis {axis} out of bounds for shape {:?}",
            self.shape
        );
        let axis_len = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let a = self.values();
        let mut out = vec![0.0; a.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |t: usize| (o * axis_len + t) * inner + i;
                let mut max = f64::NEG_INFINITY;
                for t in 0..axis_len {
                    max = max.max(a[idx(t)]);
                }
                let mut denom = 0.0;
                for t in 0..axis_len {
                    let e = (a[idx(t)] - max).exp();
                    out[idx(t)] = e;
                    denom += e;
                }
                for t in 0..axis_len {
                    out[idx(t)] /= denom;
                }
            }
        }
        let y = Rc::new(out.clone());
        let ia = self.id;
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                let mut ga = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |t: usize| (o * axis_len + t) * inner + i;
                        let mut dot = 0.0;
                        for t in 0..axis_len {
                            dot += g[idx(t)] * y[idx(t)];
                        }
                        for t in 0..axis_len {
                            ga[idx(t)] = y[idx(t)] * (g[idx(t)] - dot);
                        }
                    }
                }
                vec![(ia, ga)]
            })),
        )
    }

    /// Per-row layer normalization over the last axis of an (R, C) tensor,
    /// followed by the affine `gamma * xhat + beta`.
    ///
    /// Variance is floored at 1e-12, so a constant row normalizes to zeros
    /// (pre-affine) instead of dividing by zero.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor) -> Tensor {
        self.assert_same_tape(gamma, "layer_norm");
        self.assert_same_tape(beta, "layer_norm");
        let (r, c) = dims2(&self.shape, "layer_norm");
        assert_eq!(
            gamma.numel(),
            c,
            "layer_norm: gamma shape {:?} does not match columns of {:?}",
            gamma.shape,
            self.shape
        );
        assert_eq!(
            beta.numel(),
            c,
            "layer_norm: beta shape {:?} does not match columns of {:?}",
            beta.shape,
            self.shape
        );
        const VAR_FLOOR: f64 = 1e-12;
        let a = self.values();
        let gv = gamma.values();
        let bv = beta.values();
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut denom = vec![0.0; r];
        let mut floored = vec![false; r];
        for i in 0..r {
            let row = &a[i * c..(i + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c as f64;
            floored[i] = var < VAR_FLOOR;
            let s = var.max(VAR_FLOOR).sqrt();
            denom[i] = s;
            for j in 0..c {
                let xh = (row[j] - mu) / s;
                xhat[i * c + j] = xh;
                out[i * c + j] = gv[j] * xh + bv[j];
            }
        }
        let xhat = Rc::new(xhat);
        let denom = Rc::new(denom);
        let floored = Rc::new(floored);
        let (ia, ig, ib) = (self.id, gamma.id, beta.id);
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                let n = c as f64;
                let mut ga = vec![0.0; r * c];
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for i in 0..r {
                    let s = denom[i];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..c {
                        let dxh = g[i * c + j] * gv[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xhat[i * c + j];
                        ggamma[j] += g[i * c + j] * xhat[i * c + j];
                        gbeta[j] += g[i * c + j];
                    }
                    for j in 0..c {
                        let dxh = g[i * c + j] * gv[j];
                        ga[i * c + j] = if floored[i] {
                            // Variance clamped: denominator is constant.
                            (dxh - sum_dxh / n) / s
                        } else {
                            (dxh - sum_dxh / n - xhat[i * c + j] * sum_dxh_xh / n) / s
                        };
                    }
                }
                vec![(ia, ga), (ig, ggamma), (ib, gbeta)]
            })),
        )
    }

    /// Row-stochastic normalization of a non-negative (R, C) matrix:
    /// out[i,j] = m[i,j] / sum_j m[i,j]. Row sums must be positive.
    pub fn row_normalize(&self) -> Tensor {
        let (r, c) = dims2(&self.shape, "row_normalize");
        let a = self.values();
        let mut sums = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let s: f64 = a[i * c..(i + 1) * c].iter().sum();
            assert!(s > 0.0, "row_normalize: row {i} sums to {s}");
            sums[i] = s;
            for j in 0..c {
                out[i * c + j] = a[i * c + j] / s;
            }
        }
        let y = Rc::new(out.clone());
        let sums = Rc::new(sums);
        let ia = self.id;
        self.tape.push(
            self.shape.clone(),
            out,
            Some(Box::new(move |g| {
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += g[i * c + j] * y[i * c + j];
                    }
                    for j in 0..c {
                        ga[i * c + j] = (g[i * c + j] - dot) / sums[i];
                    }
                }
                vec![(ia, ga)]
            })),
        )
    }

    // ── indexing and assembly ────────────────────────────────────────

    /// Row gather on an (R, C) tensor: out[r, :] = self[indices[r], :].
    /// Doubles as embedding lookup when `self` is an embedding table.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let (r, c) = dims2(&self.shape, "gather_rows");
        for &ix in indices {
            assert!(ix < r, "gather_rows: index {ix} out of bounds for {r} rows");
        }
        let a = self.values();
        let mut out = vec![0.0; indices.len() * c];
        for (o, &ix) in indices.iter().enumerate() {
            out[o * c..(o + 1) * c].copy_from_slice(&a[ix * c..(ix + 1) * c]);
        }
        let idx: Rc<Vec<usize>> = Rc::new(indices.to_vec());
        let ia = self.id;
        self.tape.push(
            vec![indices.len(), c],
            out,
            Some(Box::new(move |g| {
                let mut ga = vec![0.0; r * c];
                for (o, &ix) in idx.iter().enumerate() {
                    for j in 0..c {
                        ga[ix * c + j] += g[o * c + j];
                    }
                }
                vec![(ia, ga)]
            })),
        )
    }

    /// Row scatter: place rows of this (r, C) tensor into a zeroed
    /// (total_rows, C) tensor at distinct `indices`.
    pub fn scatter_rows(&self, total_rows: usize, indices: &[usize]) -> Tensor {
        let (r, c) = dims2(&self.shape, "scatter_rows");
        assert_eq!(
            r,
            indices.len(),
            "scatter_rows: {r} rows but {} indices",
            indices.len()
        );
        let mut seen = vec![false; total_rows];
        for &ix in indices {
            assert!(
                ix < total_rows,
                "scatter_rows: index {ix} out of bounds for {total_rows} rows"
            );
            assert!(!seen[ix], "scatter_rows: duplicate index {ix}");
            seen[ix] = true;
        }
        let a = self.values();
        let mut out = vec![0.0; total_rows * c];
        for (o, &ix) in indices.iter().enumerate() {
            out[ix * c..(ix + 1) * c].copy_from_slice(&a[o * c..(o + 1) * c]);
        }
        let idx: Rc<Vec<usize>> = Rc::new(indices.to_vec());
        let ia = self.id;
        self.tape.push(
            vec![total_rows, c],
            out,
            Some(Box::new(move |g| {
                let mut ga = vec![0.0; idx.len() * c];
                for (o, &ix) in idx.iter().enumerate() {
                    ga[o * c..(o + 1) * c].copy_from_slice(&g[ix * c..(ix + 1) * c]);
                }
                vec![(ia, ga)]
            })),
        )
    }

    /// Column slice of an (R, C) tensor: out[:, j] = self[:, start + j].
    pub fn slice_cols(&self, start: usize, len: usize) -> Tensor {
        let (r, c) = dims2(&self.shape, "slice_cols");
        assert!(
            start + len <= c,
            "slice_cols: range {start}..{} out of bounds for {c} columns",
            start + len
        );
        let a = self.values();
        let mut out = vec![0.0; r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len].copy_from_slice(&a[i * c + start..i * c + start + len]);
        }
        let ia = self.id;
        self.tape.push(
            vec![r, len],
            out,
            Some(Box::new(move |g| {
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    ga[i * c + start..i * c + start + len]
                        .copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                vec![(ia, ga)]
            })),
        )
    }

    /// 1-D convolution along the time axis of a (T, C_in) tensor.
    ///
    /// `weight` has shape (C_out, C_in, K), `bias` shape (C_out). The input
    /// is zero-padded on the left by `pad_left` steps; output length is
    /// T + pad_left - dilation * (K - 1).
    pub fn conv1d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        dilation: usize,
        pad_left: usize,
    ) -> Tensor {
        self.assert_same_tape(weight, "conv1d");
        self.assert_same_tape(bias, "conv1d");
        let (t_in, c_in) = dims2(&self.shape, "conv1d");
        assert_eq!(
            weight.shape.len(),
            3,
            "conv1d: weight must be (C_out, C_in, K), got {:?}",
            weight.shape
        );
        let (c_out, w_cin, k) = (weight.shape[0], weight.shape[1], weight.shape[2]);
        assert_eq!(
            w_cin, c_in,
            "conv1d: input channels {:?} do not match weight {:?}",
            self.shape, weight.shape
        );
        assert_eq!(
            bias.numel(),
            c_out,
            "conv1d: bias shape {:?} does not match {c_out} output channels",
            bias.shape
        );
        assert!(dilation >= 1, "conv1d: dilation must be >= 1");
        let span = dilation * (k - 1);
        assert!(
            t_in + pad_left > span,
            "conv1d: receptive field {} exceeds padded input length {}",
            span + 1,
            t_in + pad_left
        );
        let t_out = t_in + pad_left - span;
        let a = self.values();
        let wv = weight.values();
        let bv = bias.values();
        let mut out = vec![0.0; t_out * c_out];
        for t in 0..t_out {
            for o in 0..c_out {
                let mut acc = bv[o];
                for kk in 0..k {
                    let tp = t + kk * dilation;
                    if tp < pad_left {
                        continue;
                    }
                    let ti = tp - pad_left;
                    for i in 0..c_in {
                        acc += wv[(o * c_in + i) * k + kk] * a[ti * c_in + i];
                    }
                }
                out[t * c_out + o] = acc;
            }
        }
        let (ia, iw, ib) = (self.id, weight.id, bias.id);
        self.tape.push(
            vec![t_out, c_out],
            out,
            Some(Box::new(move |g| {
                let mut ga = vec![0.0; t_in * c_in];
                let mut gw = vec![0.0; c_out * c_in * k];
                let mut gb = vec![0.0; c_out];
                for t in 0..t_out {
                    for o in 0..c_out {
                        let go = g[t * c_out + o];
                        if go == 0.0 {
                            continue;
                        }
                        gb[o] += go;
                        for kk in 0..k {
                            let tp = t + kk * dilation;
                            if tp < pad_left {
                                continue;
                            }
                            let ti = tp - pad_left;
                            for i in 0..c_in {
                                gw[(o * c_in + i) * k + kk] += go * a[ti * c_in + i];
                                ga[ti * c_in + i] += go * wv[(o * c_in + i) * k + kk];
                            }
                        }
                    }
                }
                vec![(ia, ga), (iw, gw), (ib, gb)]
            })),
        )
    }
}

// ── concatenation ────────────────────────────────────────────────────

/// Stack 2-d tensors along axis 0 (all must share the column count).
pub fn concat_rows(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_rows: no inputs");
    let c = dims2(parts[0].shape(), "concat_rows").1;
    let tape = parts[0].tape().clone();
    let mut total = 0;
    for p in parts {
        parts[0].assert_same_tape(p, "concat_rows");
        let (r, pc) = dims2(p.shape(), "concat_rows");
        assert_eq!(
            pc,
            c,
            "concat_rows: column mismatch {:?} vs {:?}",
            p.shape(),
            parts[0].shape()
        );
        total += r;
    }
    let mut out = Vec::with_capacity(total * c);
    let mut spans = Vec::with_capacity(parts.len());
    for p in parts {
        let v = p.values();
        spans.push((p.id(), v.len()));
        out.extend_from_slice(&v);
    }
    tape.push(
        vec![total, c],
        out,
        Some(Box::new(move |g| {
            let mut res = Vec::with_capacity(spans.len());
            let mut offset = 0;
            for &(id, len) in &spans {
                res.push((id, g[offset..offset + len].to_vec()));
                offset += len;
            }
            res
        })),
    )
}

/// Concatenate 2-d tensors along axis 1 (all must share the row count).
pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_cols: no inputs");
    let r = dims2(parts[0].shape(), "concat_cols").0;
    let tape = parts[0].tape().clone();
    let mut widths = Vec::with_capacity(parts.len());
    let mut total_c = 0;
    for p in parts {
        parts[0].assert_same_tape(p, "concat_cols");
        let (pr, pc) = dims2(p.shape(), "concat_cols");
        assert_eq!(
            pr,
            r,
            "concat_cols: row mismatch {:?} vs {:?}",
            p.shape(),
            parts[0].shape()
        );
        widths.push(pc);
        total_c += pc;
    }
    let values: Vec<_> = parts.iter().map(|p| p.values()).collect();
    let mut out = vec![0.0; r * total_c];
    for i in 0..r {
        let mut col = 0;
        for (v, &w) in values.iter().zip(&widths) {
            out[i * total_c + col..i * total_c + col + w].copy_from_slice(&v[i * w..(i + 1) * w]);
            col += w;
        }
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
    tape.push(
        vec![r, total_c],
        out,
        Some(Box::new(move |g| {
            let mut res: Vec<(usize, Vec<f64>)> = ids
                .iter()
                .zip(&widths)
                .map(|(&id, &w)| (id, vec![0.0; r * w]))
                .collect();
            for i in 0..r {
                let mut col = 0;
                for (slot, &w) in res.iter_mut().zip(&widths) {
                    slot.1[i * w..(i + 1) * w]
                        .copy_from_slice(&g[i * total_c + col..i * total_c + col + w]);
                    col += w;
                }
            }
            res
        })),
    )
}
