//! Parameterized layers built on the primitive ops: affine maps, layer
//! norm, multi-head attention, pre-norm Transformer blocks, 1-d conv.

use super::ops::concat_cols;
use super::{Ctx, Param, Tensor};
use crate::rng::{self, StepRng};

/// Affine weights are drawn from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in));
/// biases start at zero.
pub fn affine_init(rng: &mut StepRng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng::uniform(rng, -bound, bound))
        .collect()
}

/// y = x · Wᵀ + b, with W stored as (out, in).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new(rng: &mut StepRng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Param::new(
                format!("{name}.w"),
                &[fan_out, fan_in],
                affine_init(rng, fan_in, fan_out),
            ),
            b: Param::zeros(format!("{name}.b"), &[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape[1]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape[0]
    }

    /// x: (R, in) -> (R, out)
    pub fn forward(&self, cx: &mut Ctx, x: &Tensor) -> Tensor {
        let w = cx.var(&self.w);
        let b = cx.var(&self.b);
        x.matmul(&w.transpose()).add_row(&b)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

impl LayerNorm {
    pub fn new(name: &str, width: usize) -> Self {
        LayerNorm {
            gamma: Param::new(format!("{name}.gamma"), &[width], vec![1.0; width]),
            beta: Param::zeros(format!("{name}.beta"), &[width]),
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: &Tensor) -> Tensor {
        let gamma = cx.var(&self.gamma);
        let beta = cx.var(&self.beta);
        x.layer_norm(&gamma, &beta)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Concatenated multi-head attention without the output projection:
/// per head, softmax(Q Kᵀ / sqrt(d/heads)) · V.
///
/// Q, K, V are (S, d) with d divisible by `heads`. Exposed separately so the
/// pre-projection behavior is directly testable.
pub fn sdpa_concat(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Tensor {
    let d = q.shape()[1];
    assert_eq!(
        k.shape()[1],
        d,
        "attention: K width {:?} does not match Q width {:?}",
        k.shape(),
        q.shape()
    );
    assert_eq!(
        v.shape()[1],
        d,
        "attention: V width {:?} does not match Q width {:?}",
        v.shape(),
        q.shape()
    );
    assert_eq!(
        k.shape()[0],
        v.shape()[0],
        "attention: K and V sequence lengths differ"
    );
    assert!(
        heads >= 1 && d % heads == 0,
        "attention: width {d} not divisible by {heads} heads"
    );
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice_cols(h * dh, dh);
        let kh = k.slice_cols(h * dh, dh);
        let vh = v.slice_cols(h * dh, dh);
        let scores = qh.matmul(&kh.transpose()).scale(scale);
        let weights = scores.softmax(1);
        outs.push(weights.matmul(&vh));
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    concat_cols(&refs)
}

/// Full scaled dot-product attention: heads concatenated, then affinely
/// projected by `proj`.
pub fn scaled_dot_product_attention(
    cx: &mut Ctx,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    proj: &Linear,
) -> Tensor {
    let cat = sdpa_concat(q, k, v, heads);
    proj.forward(cx, &cat)
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut StepRng, name: &str, d: usize, heads: usize) -> Self {
        assert!(
            d % heads == 0,
            "attention: width {d} not divisible by {heads} heads"
        );
        MultiHeadAttention {
            wq: Linear::new(rng, &format!("{name}.wq"), d, d),
            wk: Linear::new(rng, &format!("{name}.wk"), d, d),
            wv: Linear::new(rng, &format!("{name}.wv"), d, d),
            wo: Linear::new(rng, &format!("{name}.wo"), d, d),
            heads,
        }
    }

    /// Self-attention over x: (S, d) -> (S, d).
    pub fn forward(&self, cx: &mut Ctx, x: &Tensor) -> Tensor {
        let q = self.wq.forward(cx, x);
        let k = self.wk.forward(cx, x);
        let v = self.wv.forward(cx, x);
        scaled_dot_product_attention(cx, &q, &k, &v, self.heads, &self.wo)
    }

    pub fn params(&self) -> Vec<&Param> {
        [&self.wq, &self.wk, &self.wv, &self.wo]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.wq.params_mut();
        out.extend(self.wk.params_mut());
        out.extend(self.wv.params_mut());
        out.extend(self.wo.params_mut());
        out
    }
}

/// Pre-norm Transformer block:
/// x + attn(ln1(x)), then h + ff2(relu(ff1(ln2(h)))). Feed-forward hidden
/// width is 4d.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerBlock {
    pub fn new(rng: &mut StepRng, name: &str, d: usize, heads: usize) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(&format!("{name}.ln1"), d),
            attn: MultiHeadAttention::new(rng, &format!("{name}.attn"), d, heads),
            ln2: LayerNorm::new(&format!("{name}.ln2"), d),
            ff1: Linear::new(rng, &format!("{name}.ff1"), d, 4 * d),
            ff2: Linear::new(rng, &format!("{name}.ff2"), 4 * d, d),
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: &Tensor) -> Tensor {
        let normed = self.ln1.forward(cx, x);
        let h = x.add(&self.attn.forward(cx, &normed));
        let normed2 = self.ln2.forward(cx, &h);
        let hidden = self.ff1.forward(cx, &normed2).relu();
        let ff = self.ff2.forward(cx, &hidden);
        h.add(&ff)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.ln1.params();
        out.extend(self.attn.params());
        out.extend(self.ln2.params());
        out.extend(self.ff1.params());
        out.extend(self.ff2.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.ln1.params_mut();
        out.extend(self.attn.params_mut());
        out.extend(self.ln2.params_mut());
        out.extend(self.ff1.params_mut());
        out.extend(self.ff2.params_mut());
        out
    }
}

/// 1-d convolution layer over (T, C_in) with weight (C_out, C_in, K).
#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub w: Param,
    pub b: Param,
    pub dilation: usize,
    /// Left zero-padding; `dilation * (K - 1)` keeps the length (causal).
    pub pad_left: usize,
}

impl Conv1dLayer {
    pub fn new(
        rng: &mut StepRng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        causal: bool,
    ) -> Self {
        let pad_left = if causal { dilation * (kernel - 1) } else { 0 };
        Conv1dLayer {
            w: Param::new(
                format!("{name}.w"),
                &[c_out, c_in, kernel],
                affine_init(rng, c_in * kernel, c_out),
            ),
            b: Param::zeros(format!("{name}.b"), &[c_out]),
            dilation,
            pad_left,
        }
    }

    pub fn receptive_field(&self) -> usize {
        self.dilation * (self.w.shape[2] - 1) + 1
    }

    pub fn forward(&self, cx: &mut Ctx, x: &Tensor) -> Tensor {
        let w = cx.var(&self.w);
        let b = cx.var(&self.b);
        x.conv1d(&w, &b, self.dilation, self.pad_left)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}
