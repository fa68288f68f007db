//! Spatiotemporal backends behind a fixed contract: (last patches, soft
//! adjacency) -> per-node hidden state. Two implementations are provided so
//! the fusion stage is demonstrably backend-agnostic: a gated temporal
//! convolution stack with one-hop graph mixing, and a graph-mixing gated
//! recurrent cell.

use crate::rng::StepRng;
use crate::tensor::nn::{Conv1dLayer, Linear};
use crate::tensor::ops::{concat_cols, concat_rows};
use crate::tensor::{Ctx, Param, Tensor};
use serde::{Deserialize, Serialize};

/// The backend contract: given the final patch per node (N, L*C) and an
/// adjacency with entries in [0, 1], produce hidden states (N, d').
pub trait Backend {
    fn forward(&self, cx: &mut Ctx, last_patch: &Tensor, adj: &Tensor) -> Tensor;
    fn d_out(&self) -> usize;
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    GatedTcn,
    GraphGru,
}

/// Row-normalized adjacency with self-loops: D~^-1 (A + I).
fn normalized_adjacency(cx: &mut Ctx, adj: &Tensor) -> Tensor {
    let n = adj.shape()[0];
    assert_eq!(
        adj.shape(),
        &[n, n],
        "backend: adjacency must be square, got {:?}",
        adj.shape()
    );
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    let identity = cx.constant(eye, &[n, n]);
    adj.add(&identity).row_normalize()
}

/// Apply one-hop graph mixing at every time step of a (N*L, F) tensor laid
/// out node-major (row n*L + t).
fn graph_mix(adj_norm: &Tensor, x: &Tensor, n: usize, l: usize) -> Tensor {
    let f = x.shape()[1];
    let mut parts: Vec<Tensor> = Vec::with_capacity(l);
    for t in 0..l {
        let idx: Vec<usize> = (0..n).map(|node| node * l + t).collect();
        let xt = x.gather_rows(&idx);
        let mixed = adj_norm.matmul(&xt);
        parts.push(mixed.scatter_rows(n * l, &idx));
    }
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        acc = acc.add(p);
    }
    let _ = f;
    acc
}

/// Two gated temporal convolution layers (tanh x sigmoid gates, dilations 1
/// and 2) each followed by one-hop graph mixing and a residual connection,
/// then mean pooling over time.
#[derive(Debug, Clone)]
pub struct GatedTcnBackend {
    pub patch_len: usize,
    pub channels: usize,
    pub d_prime: usize,
    filter1: Conv1dLayer,
    gate1: Conv1dLayer,
    mix1: Linear,
    res1: Linear,
    filter2: Conv1dLayer,
    gate2: Conv1dLayer,
    mix2: Linear,
}

impl GatedTcnBackend {
    pub fn new(
        rng: &mut StepRng,
        patch_len: usize,
        channels: usize,
        d_prime: usize,
        kernel: usize,
    ) -> Self {
        GatedTcnBackend {
            patch_len,
            channels,
            d_prime,
            filter1: Conv1dLayer::new(rng, "tcn.filter1", channels, d_prime, kernel, 1, true),
            gate1: Conv1dLayer::new(rng, "tcn.gate1", channels, d_prime, kernel, 1, true),
            mix1: Linear::new(rng, "tcn.mix1", d_prime, d_prime),
            res1: Linear::new(rng, "tcn.res1", channels, d_prime),
            filter2: Conv1dLayer::new(rng, "tcn.filter2", d_prime, d_prime, kernel, 2, true),
            gate2: Conv1dLayer::new(rng, "tcn.gate2", d_prime, d_prime, kernel, 2, true),
            mix2: Linear::new(rng, "tcn.mix2", d_prime, d_prime),
        }
    }

    /// Per-node gated convolution over (N*L, F) node-major rows.
    fn gated_conv(
        &self,
        cx: &mut Ctx,
        x: &Tensor,
        filter: &Conv1dLayer,
        gate: &Conv1dLayer,
        n: usize,
    ) -> Tensor {
        let l = self.patch_len;
        let rows: Vec<Tensor> = (0..n)
            .map(|node| {
                let idx: Vec<usize> = (node * l..(node + 1) * l).collect();
                let xi = x.gather_rows(&idx);
                let f = filter.forward(cx, &xi).tanh_op();
                let g = gate.forward(cx, &xi).sigmoid();
                f.mul(&g)
            })
            .collect();
        let refs: Vec<&Tensor> = rows.iter().collect();
        concat_rows(&refs)
    }
}

impl Backend for GatedTcnBackend {
    fn forward(&self, cx: &mut Ctx, last_patch: &Tensor, adj: &Tensor) -> Tensor {
        let n = last_patch.shape()[0];
        let l = self.patch_len;
        let c = self.channels;
        assert_eq!(
            last_patch.shape()[1],
            l * c,
            "backend: input width {:?} does not match L*C = {}",
            last_patch.shape(),
            l * c
        );
        let adj_norm = normalized_adjacency(cx, adj);
        // (N, L*C) -> (N*L, C) node-major rows.
        let x = last_patch.reshape(&[n * l, c]);

        let conv1 = self.gated_conv(cx, &x, &self.filter1, &self.gate1, n);
        let mixed1 = self.mix1.forward(cx, &graph_mix(&adj_norm, &conv1, n, l));
        let h1 = mixed1.add(&self.res1.forward(cx, &x));

        let conv2 = self.gated_conv(cx, &h1, &self.filter2, &self.gate2, n);
        let mixed2 = self.mix2.forward(cx, &graph_mix(&adj_norm, &conv2, n, l));
        let h2 = mixed2.add(&h1);

        // Mean pooling over time: constant (N, N*L) averaging matrix.
        let mut pool = vec![0.0; n * n * l];
        for node in 0..n {
            for t in 0..l {
                pool[node * (n * l) + node * l + t] = 1.0 / l as f64;
            }
        }
        let pool = cx.constant(pool, &[n, n * l]);
        pool.matmul(&h2)
    }

    fn d_out(&self) -> usize {
        self.d_prime
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = self.filter1.params();
        out.extend(self.gate1.params());
        out.extend(self.mix1.params());
        out.extend(self.res1.params());
        out.extend(self.filter2.params());
        out.extend(self.gate2.params());
        out.extend(self.mix2.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.filter1.params_mut();
        out.extend(self.gate1.params_mut());
        out.extend(self.mix1.params_mut());
        out.extend(self.res1.params_mut());
        out.extend(self.filter2.params_mut());
        out.extend(self.gate2.params_mut());
        out.extend(self.mix2.params_mut());
        out
    }
}

/// Gated recurrent cell with graph mixing inside the gates, unrolled over
/// the patch; the final hidden state is the output.
#[derive(Debug, Clone)]
pub struct GraphGruBackend {
    pub patch_len: usize,
    pub channels: usize,
    pub d_prime: usize,
    wz: Linear,
    wr: Linear,
    wc: Linear,
}

impl GraphGruBackend {
    pub fn new(rng: &mut StepRng, patch_len: usize, channels: usize, d_prime: usize) -> Self {
        let input = d_prime + channels;
        GraphGruBackend {
            patch_len,
            channels,
            d_prime,
            wz: Linear::new(rng, "gru.wz", input, d_prime),
            wr: Linear::new(rng, "gru.wr", input, d_prime),
            wc: Linear::new(rng, "gru.wc", input, d_prime),
        }
    }
}

impl Backend for GraphGruBackend {
    fn forward(&self, cx: &mut Ctx, last_patch: &Tensor, adj: &Tensor) -> Tensor {
        let n = last_patch.shape()[0];
        let l = self.patch_len;
        let c = self.channels;
        assert_eq!(
            last_patch.shape()[1],
            l * c,
            "backend: input width {:?} does not match L*C = {}",
            last_patch.shape(),
            l * c
        );
        let adj_norm = normalized_adjacency(cx, adj);
        let mut h = cx.tape.zeros(&[n, self.d_prime]);
        for t in 0..l {
            let x_t = last_patch.slice_cols(t * c, c);
            let joint = adj_norm.matmul(&concat_cols(&[&h, &x_t]));
            let z = self.wz.forward(cx, &joint).sigmoid();
            let r = self.wr.forward(cx, &joint).sigmoid();
            let gated = adj_norm.matmul(&concat_cols(&[&r.mul(&h), &x_t]));
            let cand = self.wc.forward(cx, &gated).tanh_op();
            let keep = z.mul(&h);
            let update = z.neg().offset(1.0).mul(&cand);
            h = keep.add(&update);
        }
        h
    }

    fn d_out(&self) -> usize {
        self.d_prime
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = self.wz.params();
        out.extend(self.wr.params());
        out.extend(self.wc.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.wz.params_mut();
        out.extend(self.wr.params_mut());
        out.extend(self.wc.params_mut());
        out
    }
}

/// Concrete backend storage (checkpointable; the trait stays object-safe
/// for tests that swap in custom backends).
#[derive(Debug, Clone)]
pub enum BackendNet {
    GatedTcn(GatedTcnBackend),
    GraphGru(GraphGruBackend),
}

impl BackendNet {
    pub fn new(
        kind: BackendKind,
        rng: &mut StepRng,
        patch_len: usize,
        channels: usize,
        d_prime: usize,
    ) -> Self {
        match kind {
            BackendKind::GatedTcn => {
                BackendNet::GatedTcn(GatedTcnBackend::new(rng, patch_len, channels, d_prime, 3))
            }
            BackendKind::GraphGru => {
                BackendNet::GraphGru(GraphGruBackend::new(rng, patch_len, channels, d_prime))
            }
        }
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            BackendNet::GatedTcn(_) => BackendKind::GatedTcn,
            BackendNet::GraphGru(_) => BackendKind::GraphGru,
        }
    }
}

impl Backend for BackendNet {
    fn forward(&self, cx: &mut Ctx, last_patch: &Tensor, adj: &Tensor) -> Tensor {
        match self {
            BackendNet::GatedTcn(b) => b.forward(cx, last_patch, adj),
            BackendNet::GraphGru(b) => b.forward(cx, last_patch, adj),
        }
    }

    fn d_out(&self) -> usize {
        match self {
            BackendNet::GatedTcn(b) => b.d_out(),
            BackendNet::GraphGru(b) => b.d_out(),
        }
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            BackendNet::GatedTcn(b) => b.params(),
            BackendNet::GraphGru(b) => b.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            BackendNet::GatedTcn(b) => b.params_mut(),
            BackendNet::GraphGru(b) => b.params_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_patch(seed: u64, n: usize, lc: usize) -> Vec<f64> {
        let mut r = rng::root(seed);
        (0..n * lc).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect()
    }

    #[test]
    fn zero_graph_identical_inputs_give_identical_rows() {
        let mut r = rng::root(1);
        let backend = GatedTcnBackend::new(&mut r, 6, 1, 5, 3);
        let mut cx = Ctx::new();
        let one_node: Vec<f64> = (0..6).map(|t| (t as f64 * 0.5).sin()).collect();
        let patch = cx.constant(one_node.repeat(3), &[3, 6]);
        let adj = cx.constant(vec![0.0; 9], &[3, 3]);
        let h = backend.forward(&mut cx, &patch, &adj);
        assert_eq!(h.shape(), &[3, 5]);
        let v = h.to_vec();
        for node in 1..3 {
            for j in 0..5 {
                assert!((v[node * 5 + j] - v[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_graph_is_local() {
        // With self-loops only, perturbing node 0 leaves node 1 unchanged.
        let mut r = rng::root(2);
        for backend in [
            BackendNet::GatedTcn(GatedTcnBackend::new(&mut r, 4, 1, 5, 3)),
            BackendNet::GraphGru(GraphGruBackend::new(&mut r, 4, 1, 5)),
        ] {
            let base = random_patch(3, 3, 4);
            let mut bumped = base.clone();
            bumped[0] += 1.0;

            let run = |vals: &[f64]| -> Vec<f64> {
                let mut cx = Ctx::new();
                let patch = cx.constant(vals.to_vec(), &[3, 4]);
                let adj = cx.constant(vec![0.0; 9], &[3, 3]);
                backend.forward(&mut cx, &patch, &adj).to_vec()
            };
            let a = run(&base);
            let b = run(&bumped);
            for j in 0..5 {
                assert!((a[5 + j] - b[5 + j]).abs() < 1e-15, "node 1 must not move");
                assert!((a[10 + j] - b[10 + j]).abs() < 1e-15, "node 2 must not move");
            }
            assert!((0..5).any(|j| (a[j] - b[j]).abs() > 1e-12), "node 0 must move");
        }
    }

    #[test]
    fn nonzero_graph_propagates_information() {
        let mut r = rng::root(4);
        let backend = GatedTcnBackend::new(&mut r, 4, 1, 5, 3);
        let base = random_patch(5, 3, 4);
        let mut bumped = base.clone();
        bumped[0] += 1.0;
        let run = |vals: &[f64]| -> Vec<f64> {
            let mut cx = Ctx::new();
            let patch = cx.constant(vals.to_vec(), &[3, 4]);
            let mut a = vec![0.0; 9];
            a[1 * 3 + 0] = 1.0; // node 1 attends to node 0
            let adj = cx.constant(a, &[3, 3]);
            backend.forward(&mut cx, &patch, &adj).to_vec()
        };
        let a = run(&base);
        let b = run(&bumped);
        assert!((0..5).any(|j| (a[5 + j] - b[5 + j]).abs() > 1e-12));
    }

    #[test]
    fn gru_backend_shapes_and_determinism() {
        let mut r = rng::root(6);
        let backend = GraphGruBackend::new(&mut r, 4, 2, 7);
        let vals = random_patch(7, 3, 8);
        let run = || -> Vec<f64> {
            let mut cx = Ctx::new();
            let patch = cx.constant(vals.clone(), &[3, 8]);
            let adj = cx.constant(vec![0.1; 9], &[3, 3]);
            let out = backend.forward(&mut cx, &patch, &adj);
            assert_eq!(out.shape(), &[3, 7]);
            out.to_vec()
        };
        assert_eq!(run(), run());
    }
}
