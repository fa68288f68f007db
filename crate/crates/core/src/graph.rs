//! Discrete dependency-graph learning.
//!
//! Per ordered node pair (i, j), a two-layer head maps Z_i || Z_j to a pair
//! of logits (positive, negative); Z_i combines the window's cached encoder
//! feature with a global feature extracted by convolutions over the node's
//! entire training series. The normalized positive-class probability is
//! regularized toward a kNN graph, and the adjacency fed downstream is a
//! Gumbel-softmax sample so gradients pass through the (near-)discrete draw.

use crate::error::{Error, Result};
use crate::rng::{self, StepRng};
use crate::tensor::nn::{Conv1dLayer, Linear};
use crate::tensor::ops::concat_cols;
use crate::tensor::{Ctx, Param, Tensor};
use serde::{Deserialize, Serialize};

/// Probability clip applied inside logs.
pub const EPS_CLIP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilaritySource {
    /// kNN over cached encoder representations (the default).
    Representations,
    /// kNN over the raw training series (regularization ablation).
    RawSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphLearnerSettings {
    /// GSL on/off; when off the forecaster consumes the kNN graph (or a
    /// provided static graph) directly.
    pub enabled: bool,
    pub k: usize,
    pub tau: f64,
    /// Optional linear temperature anneal (start, end) across epochs.
    pub anneal: Option<(f64, f64)>,
    /// Width of the node embedding Z.
    pub d_g: usize,
    pub source: SimilaritySource,
    pub conv_channels: usize,
    pub conv_kernel: usize,
}

impl Default for GraphLearnerSettings {
    fn default() -> Self {
        GraphLearnerSettings {
            enabled: true,
            k: 10,
            tau: 0.5,
            anneal: None,
            d_g: 32,
            source: SimilaritySource::Representations,
            conv_channels: 8,
            conv_kernel: 7,
        }
    }
}

impl GraphLearnerSettings {
    pub fn tau_at(&self, epoch: usize, total_epochs: usize) -> f64 {
        match self.anneal {
            None => self.tau,
            Some((start, end)) => {
                if total_epochs <= 1 {
                    return end;
                }
                let t = (epoch.saturating_sub(1)) as f64 / (total_epochs - 1) as f64;
                start + (end - start) * t
            }
        }
    }
}

// ── kNN graph ────────────────────────────────────────────────────────

/// Binary row-wise kNN adjacency: A[i][j] = 1 iff j is among the k most
/// cosine-similar rows to i (j != i). Diagonal is zero; each row has
/// exactly k ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    pub n: usize,
    pub k: usize,
    adj: Vec<bool>,
}

impl KnnGraph {
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    pub fn row_sum(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.adj[i * self.n + j]).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.adj.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.adj[i * self.n + j] {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Build the kNN graph over row features (n rows of width f).
/// Ties are broken toward the lower index.
pub fn knn_graph(features: &[f64], n: usize, f: usize, k: usize) -> Result<KnnGraph> {
    assert_eq!(features.len(), n * f, "knn_graph: feature matrix shape mismatch");
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let row = &features[i * f..(i + 1) * f];
        norms[i] = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norms[i] == 0.0 {
            return Err(Error::ZeroNormRow { node: i });
        }
    }
    let mut adj = vec![false; n * n];
    for i in 0..n {
        let a = &features[i * f..(i + 1) * f];
        let mut sims: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let b = &features[j * f..(j + 1) * f];
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (dot / (norms[i] * norms[j]), j)
            })
            .collect();
        sims.sort_by(|(sa, ja), (sb, jb)| {
            sb.partial_cmp(sa).unwrap().then_with(|| ja.cmp(jb))
        });
        for &(_, j) in sims.iter().take(k) {
            adj[i * n + j] = true;
        }
    }
    Ok(KnnGraph { n, k, adj })
}

// ── learner parameters ───────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct GraphLearner {
    pub settings: GraphLearnerSettings,
    /// Global-feature conv stack over the full training series.
    pub conv1: Conv1dLayer,
    pub conv2: Conv1dLayer,
    pub g_fc: Linear,
    /// Window-feature map: P*d -> d_g.
    pub z_fc: Linear,
    /// Pairwise head: 2*d_g -> d_g -> 2.
    pub pair_hidden: Linear,
    pub pair_out: Linear,
    train_len: usize,
    channels: usize,
}

impl GraphLearner {
    pub fn new(
        rng: &mut StepRng,
        settings: &GraphLearnerSettings,
        train_len: usize,
        channels: usize,
        window_feature_len: usize,
    ) -> Result<Self> {
        let ch = settings.conv_channels;
        let k = settings.conv_kernel;
        let conv1 = Conv1dLayer::new(rng, "gsl.conv1", channels, ch, k, 1, true);
        let conv2 = Conv1dLayer::new(rng, "gsl.conv2", ch, ch, k, 2, true);
        if train_len < conv1.receptive_field() + conv2.receptive_field() - 1 {
            return Err(Error::WindowTooLong {
                window: conv1.receptive_field() + conv2.receptive_field() - 1,
                available: train_len,
            });
        }
        let d_g = settings.d_g;
        Ok(GraphLearner {
            settings: settings.clone(),
            conv1,
            conv2,
            g_fc: Linear::new(rng, "gsl.g_fc", train_len * ch, d_g),
            z_fc: Linear::new(rng, "gsl.z_fc", window_feature_len, d_g),
            pair_hidden: Linear::new(rng, "gsl.pair_hidden", 2 * d_g, 2 * d_g),
            pair_out: Linear::new(rng, "gsl.pair_out", 2 * d_g, 2),
            train_len,
            channels,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.conv1.params();
        out.extend(self.conv2.params());
        out.extend(self.g_fc.params());
        out.extend(self.z_fc.params());
        out.extend(self.pair_hidden.params());
        out.extend(self.pair_out.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.conv1.params_mut();
        out.extend(self.conv2.params_mut());
        out.extend(self.g_fc.params_mut());
        out.extend(self.z_fc.params_mut());
        out.extend(self.pair_hidden.params_mut());
        out.extend(self.pair_out.params_mut());
        out
    }

    /// Global features G: per node, causal convolutions over the entire
    /// training series, flattened and affinely mapped to d_g.
    ///
    /// `series` holds each node's training series, node-major, (T_train * C)
    /// values per node.
    pub fn global_features(&self, cx: &mut Ctx, series: &[Vec<f64>]) -> Tensor {
        let rows: Vec<Tensor> = series
            .iter()
            .map(|s| {
                assert_eq!(
                    s.len(),
                    self.train_len * self.channels,
                    "global_features: series length {} does not match training length {}",
                    s.len(),
                    self.train_len * self.channels
                );
                let x = cx.constant(s.clone(), &[self.train_len, self.channels]);
                let h1 = self.conv1.forward(cx, &x).relu();
                let h2 = self.conv2.forward(cx, &h1).relu();
                h2.reshape(&[1, self.train_len * self.settings.conv_channels])
            })
            .collect();
        let refs: Vec<&Tensor> = rows.iter().collect();
        let flat = crate::tensor::ops::concat_rows(&refs);
        self.g_fc.forward(cx, &flat)
    }

    /// Z = relu(FC(H)) + G, where H is the (N, P*d) window feature.
    pub fn node_embeddings(&self, cx: &mut Ctx, h: &Tensor, g: &Tensor) -> Tensor {
        assert_eq!(
            h.shape()[1],
            self.z_fc.fan_in(),
            "node_embeddings: feature width {:?} does not match learner input {}",
            h.shape(),
            self.z_fc.fan_in()
        );
        self.z_fc.forward(cx, h).relu().add(g)
    }

    /// Unnormalized pairwise logits Theta, (N, N, 2), from the ordered
    /// concatenation Z_i || Z_j (directed: Theta_ij != Theta_ji in general).
    pub fn pairwise_logits(&self, cx: &mut Ctx, z: &Tensor) -> Tensor {
        let n = z.shape()[0];
        let mut idx_i = Vec::with_capacity(n * n);
        let mut idx_j = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                idx_i.push(i);
                idx_j.push(j);
            }
        }
        let zi = z.gather_rows(&idx_i);
        let zj = z.gather_rows(&idx_j);
        let pairs = concat_cols(&[&zi, &zj]);
        let hidden = self.pair_hidden.forward(cx, &pairs).relu();
        let logits = self.pair_out.forward(cx, &hidden);
        logits.reshape(&[n, n, 2])
    }
}

/// Normalized positive-class probability Theta' = softmax(Theta)[..., 0],
/// shape (N, N).
pub fn positive_probability(theta: &Tensor) -> Tensor {
    let n = theta.shape()[0];
    theta
        .reshape(&[n * n, 2])
        .softmax(1)
        .slice_cols(0, 1)
        .reshape(&[n, n])
}

/// Binary cross-entropy of Theta' against the kNN graph, summed over all
/// ordered pairs. Probabilities are clipped to [eps, 1-eps] inside the logs.
pub fn graph_regularization(cx: &mut Ctx, theta_prime: &Tensor, target: &KnnGraph) -> Tensor {
    let n = target.n;
    assert_eq!(
        theta_prime.shape(),
        &[n, n],
        "graph_regularization: probability shape {:?} does not match graph n={n}",
        theta_prime.shape()
    );
    let a = cx.constant(target.to_f64(), &[n, n]);
    let one_minus_a = a.neg().offset(1.0);
    let p = theta_prime.clamp(EPS_CLIP, 1.0 - EPS_CLIP);
    let one_minus_p = p.neg().offset(1.0);
    let pos = a.mul(&p.ln());
    let neg = one_minus_a.mul(&one_minus_p.ln());
    pos.add(&neg).sum().neg()
}

/// Draw i.i.d. Gumbel(0,1) noise for every (pair, class) slot.
pub fn draw_gumbel_noise(rng: &mut StepRng, n: usize) -> Vec<f64> {
    (0..n * n * 2).map(|_| rng::gumbel01(rng)).collect()
}

/// Differentiable near-discrete adjacency: per pair,
/// softmax((Theta + g) / tau), keeping the positive coordinate. Noise is a
/// constant on the tape; gradients flow through the softmax into Theta.
pub fn gumbel_sample_with_noise(theta: &Tensor, noise: &[f64], tau: f64) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(Error::InvalidTemperature(tau));
    }
    let n = theta.shape()[0];
    assert_eq!(
        noise.len(),
        n * n * 2,
        "gumbel_sample: noise length {} does not match {} pairs",
        noise.len(),
        n * n * 2
    );
    let g = theta.tape().constant(noise.to_vec(), &[n, n, 2]);
    let shifted = theta.add(&g).scale(1.0 / tau);
    Ok(shifted
        .reshape(&[n * n, 2])
        .softmax(1)
        .slice_cols(0, 1)
        .reshape(&[n, n]))
}

/// Gumbel-softmax sample with internally drawn noise.
pub fn gumbel_sample(
    rng: &mut StepRng,
    theta: &Tensor,
    tau: f64,
) -> Result<Tensor> {
    let n = theta.shape()[0];
    let noise = draw_gumbel_noise(rng, n);
    gumbel_sample_with_noise(theta, &noise, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    // ── knn ──────────────────────────────────────────────────────────

    #[test]
    fn knn_tie_breaks_toward_lower_index() {
        // e1, e1, e2: the duplicated rows pick each other; the orthogonal
        // row ties between them and picks the lower index.
        let features = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let g = knn_graph(&features, 3, 2, 1).unwrap();
        assert!(g.has_edge(0, 1));
        assert!(g.has_edge(1, 0));
        assert!(g.has_edge(2, 0));
        assert!(!g.has_edge(2, 1));
    }

    #[test]
    fn knn_full_k_is_all_off_diagonal() {
        let mut r = rng::root(3);
        let features: Vec<f64> = (0..5 * 4).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let g = knn_graph(&features, 5, 4, 4).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(g.has_edge(i, j), i != j);
            }
        }
    }

    #[test]
    fn knn_matches_brute_force_sort_oracle() {
        let mut r = rng::root(4);
        for trial in 0..20 {
            let (n, f, k) = (6, 4, 1 + trial % 4);
            let features: Vec<f64> =
                (0..n * f).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
            let g = knn_graph(&features, n, f, k).unwrap();
            for i in 0..n {
                let norm = |row: &[f64]| row.iter().map(|x| x * x).sum::<f64>().sqrt();
                let a = &features[i * f..(i + 1) * f];
                let mut sims: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let b = &features[j * f..(j + 1) * f];
                        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                        (dot / (norm(a) * norm(b)), j)
                    })
                    .collect();
                sims.sort_by(|(sa, ja), (sb, jb)| {
                    sb.partial_cmp(sa).unwrap().then_with(|| ja.cmp(jb))
                });
                for (rank, &(_, j)) in sims.iter().enumerate() {
                    assert_eq!(g.has_edge(i, j), rank < k);
                }
            }
        }
    }

    #[test]
    fn knn_rows_sum_to_k_and_diag_zero() {
        let mut r = rng::root(5);
        let features: Vec<f64> = (0..8 * 3).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        for k in 1..8 {
            let g = knn_graph(&features, 8, 3, k).unwrap();
            for i in 0..8 {
                assert_eq!(g.row_sum(i), k);
                assert!(!g.has_edge(i, i));
            }
        }
    }

    #[test]
    fn knn_rejects_zero_norm_and_bad_k() {
        let features = vec![0.0, 0.0, 1.0, 1.0];
        assert!(matches!(
            knn_graph(&features, 2, 2, 1),
            Err(Error::ZeroNormRow { node: 0 })
        ));
        let ok = vec![1.0, 0.0, 0.0, 1.0];
        assert!(matches!(knn_graph(&ok, 2, 2, 2), Err(Error::InvalidK { .. })));
    }

    // ── regularization ───────────────────────────────────────────────

    fn toy_graph(n: usize, edges: &[(usize, usize)]) -> KnnGraph {
        let mut adj = vec![false; n * n];
        for &(i, j) in edges {
            adj[i * n + j] = true;
        }
        KnnGraph { n, k: 1, adj }
    }

    #[test]
    fn bce_is_tiny_when_probabilities_match_target() {
        let g = toy_graph(2, &[(0, 1), (1, 0)]);
        let mut cx = Ctx::new();
        let p = cx.constant(vec![0.0, 1.0, 1.0, 0.0], &[2, 2]);
        let loss = graph_regularization(&mut cx, &p, &g).scalar_value();
        assert!(loss >= 0.0);
        assert!(loss <= 4.0 * (-(1.0 - EPS_CLIP).ln()) + 1e-12);
    }

    #[test]
    fn bce_at_half_is_n_squared_log_two() {
        let g = toy_graph(3, &[(0, 1), (1, 2), (2, 0)]);
        let mut cx = Ctx::new();
        let p = cx.constant(vec![0.5; 9], &[3, 3]);
        let loss = graph_regularization(&mut cx, &p, &g).scalar_value();
        assert!((loss - 9.0 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn bce_matches_brute_force_sum() {
        let mut r = rng::root(7);
        let g = toy_graph(4, &[(0, 1), (1, 3), (2, 0), (3, 2)]);
        let probs: Vec<f64> = (0..16).map(|_| rng::uniform(&mut r, 0.05, 0.95)).collect();
        let mut cx = Ctx::new();
        let p = cx.constant(probs.clone(), &[4, 4]);
        let loss = graph_regularization(&mut cx, &p, &g).scalar_value();
        let mut brute = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let a = if g.has_edge(i, j) { 1.0 } else { 0.0 };
                brute += -a * probs[i * 4 + j].ln() - (1.0 - a) * (1.0 - probs[i * 4 + j]).ln();
            }
        }
        assert!((loss - brute).abs() < 1e-9);
    }

    // ── gumbel ───────────────────────────────────────────────────────

    #[test]
    fn symmetric_logits_zero_noise_give_half() {
        let mut cx = Ctx::new();
        let theta = cx.constant(vec![0.0, 0.0], &[1, 1, 2]);
        let a = gumbel_sample_with_noise(&theta, &[0.0, 0.0], 1.0).unwrap();
        assert!((a.scalar_value() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn low_temperature_approaches_one_hot() {
        let mut cx = Ctx::new();
        let theta = cx.constant(vec![2.0, 1.0], &[1, 1, 2]);
        let a = gumbel_sample_with_noise(&theta, &[0.0, 0.0], 1e-3).unwrap();
        assert!((a.scalar_value() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn invalid_temperature_is_rejected() {
        let mut cx = Ctx::new();
        let theta = cx.constant(vec![0.0, 0.0], &[1, 1, 2]);
        assert!(matches!(
            gumbel_sample_with_noise(&theta, &[0.0, 0.0], 0.0),
            Err(Error::InvalidTemperature(_))
        ));
    }

    #[test]
    fn hard_threshold_frequency_matches_softmax() {
        // Gumbel-max: P(positive wins) = softmax(theta)[0] = 0.7.
        let mut r = rng::split(123, "gumbel-mc");
        let mut cx = Ctx::new();
        let theta = cx.constant(vec![0.7f64.ln(), 0.3f64.ln()], &[1, 1, 2]);
        let draws = 100_000;
        let mut hits = 0usize;
        for _ in 0..draws {
            let noise = draw_gumbel_noise(&mut r, 1);
            let a = gumbel_sample_with_noise(&theta, &noise, 0.5).unwrap();
            if a.scalar_value() > 0.5 {
                hits += 1;
            }
        }
        let freq = hits as f64 / draws as f64;
        assert!((freq - 0.7).abs() <= 0.01, "frequency {freq}");
    }

    #[test]
    fn entries_lie_in_open_interval_and_are_monotone_in_logit() {
        let mut r = rng::split(9, "gumbel-range");
        for _ in 0..200 {
            let mut cx = Ctx::new();
            let t0 = rng::uniform(&mut r, -3.0, 3.0);
            let t1 = rng::uniform(&mut r, -3.0, 3.0);
            let noise = draw_gumbel_noise(&mut r, 1);
            let theta = cx.constant(vec![t0, t1], &[1, 1, 2]);
            let v = gumbel_sample_with_noise(&theta, &noise, 0.5)
                .unwrap()
                .scalar_value();
            assert!(v > 0.0 && v < 1.0);
            // Raising the positive logit raises the entry for the same noise.
            let theta_up = cx.constant(vec![t0 + 0.5, t1], &[1, 1, 2]);
            let v_up = gumbel_sample_with_noise(&theta_up, &noise, 0.5)
                .unwrap()
                .scalar_value();
            assert!(v_up > v);
        }
    }

    #[test]
    fn annealing_reduces_variance_around_extremes() {
        let mut cx = Ctx::new();
        let theta = cx.constant(vec![0.4, -0.1], &[1, 1, 2]);
        let spread = |tau: f64| -> f64 {
            let mut r = rng::split(31, "anneal");
            let mut total = 0.0;
            let draws = 2000;
            for _ in 0..draws {
                let noise = draw_gumbel_noise(&mut r, 1);
                let v = gumbel_sample_with_noise(&theta, &noise, tau)
                    .unwrap()
                    .scalar_value();
                // Distance from the nearest extreme.
                total += v.min(1.0 - v);
            }
            total / draws as f64
        };
        let s1 = spread(1.0);
        let s05 = spread(0.5);
        let s01 = spread(0.1);
        assert!(s1 > s05 && s05 > s01, "{s1} {s05} {s01}");
    }

    // ── learner wiring ───────────────────────────────────────────────

    fn tiny_learner(seed: u64, train_len: usize, feat: usize) -> GraphLearner {
        let mut r = rng::root(seed);
        let settings = GraphLearnerSettings {
            d_g: 6,
            conv_channels: 3,
            conv_kernel: 3,
            ..Default::default()
        };
        GraphLearner::new(&mut r, &settings, train_len, 1, feat).unwrap()
    }

    #[test]
    fn identical_series_give_identical_global_features() {
        let learner = tiny_learner(1, 20, 8);
        let mut cx = Ctx::new();
        let series = vec![
            (0..20).map(|t| (t as f64 * 0.3).sin()).collect::<Vec<f64>>(),
            (0..20).map(|t| (t as f64 * 0.3).sin()).collect::<Vec<f64>>(),
            (0..20).map(|t| (t as f64 * 0.7).cos()).collect::<Vec<f64>>(),
        ];
        let g = learner.global_features(&mut cx, &series);
        assert_eq!(g.shape(), &[3, 6]);
        let v = g.to_vec();
        for j in 0..6 {
            assert_eq!(v[j], v[6 + j]);
        }
    }

    #[test]
    fn short_training_series_is_rejected() {
        let mut r = rng::root(2);
        let settings = GraphLearnerSettings {
            conv_kernel: 7,
            ..Default::default()
        };
        assert!(GraphLearner::new(&mut r, &settings, 10, 1, 8).is_err());
    }

    #[test]
    fn node_embedding_formula_cases() {
        let learner = tiny_learner(3, 20, 8);
        let mut cx = Ctx::new();
        // H = 0 -> Z = relu(bias) + G.
        let h = cx.constant(vec![0.0; 2 * 8], &[2, 8]);
        let g = cx.constant(vec![0.25; 12], &[2, 6]);
        let z = learner.node_embeddings(&mut cx, &h, &g).to_vec();
        for row in 0..2 {
            for j in 0..6 {
                let expect = learner.z_fc.b.value[j].max(0.0) + 0.25;
                assert!((z[row * 6 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_affine_and_zero_global_give_zero_embeddings() {
        let mut learner = tiny_learner(4, 20, 8);
        learner.z_fc.w.value.iter_mut().for_each(|v| *v = 0.0);
        learner.z_fc.b.value.iter_mut().for_each(|v| *v = 0.0);
        let mut cx = Ctx::new();
        let h = cx.constant(vec![0.7; 2 * 8], &[2, 8]);
        let g = cx.constant(vec![0.0; 12], &[2, 6]);
        let z = learner.node_embeddings(&mut cx, &h, &g);
        assert!(z.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_embeddings_give_identical_logits() {
        let learner = tiny_learner(5, 20, 8);
        let mut cx = Ctx::new();
        let z = cx.constant(vec![0.3, -0.4, 0.2, 0.9, -0.1, 0.5].repeat(3), &[3, 6]);
        let theta = learner.pairwise_logits(&mut cx, &z);
        assert_eq!(theta.shape(), &[3, 3, 2]);
        let v = theta.to_vec();
        for pair in 1..9 {
            assert!((v[pair * 2] - v[0]).abs() < 1e-12);
            assert!((v[pair * 2 + 1] - v[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_logits_match_direct_formula() {
        let learner = tiny_learner(6, 20, 8);
        let mut r = rng::root(8);
        let zv: Vec<f64> = (0..3 * 6).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let mut cx = Ctx::new();
        let z = cx.constant(zv.clone(), &[3, 6]);
        let theta = learner.pairwise_logits(&mut cx, &z).to_vec();
        for i in 0..3 {
            for j in 0..3 {
                let mut cat = zv[i * 6..(i + 1) * 6].to_vec();
                cat.extend_from_slice(&zv[j * 6..(j + 1) * 6]);
                // hidden = relu(W1 cat + b1)
                let hidden_w = learner.pair_hidden.fan_out();
                let mut hidden = vec![0.0; hidden_w];
                for o in 0..hidden_w {
                    let mut acc = learner.pair_hidden.b.value[o];
                    for (ii, cv) in cat.iter().enumerate() {
                        acc += learner.pair_hidden.w.value[o * 12 + ii] * cv;
                    }
                    hidden[o] = acc.max(0.0);
                }
                for cls in 0..2 {
                    let mut acc = learner.pair_out.b.value[cls];
                    for (ii, hv) in hidden.iter().enumerate() {
                        acc += learner.pair_out.w.value[cls * hidden_w + ii] * hv;
                    }
                    let got = theta[(i * 3 + j) * 2 + cls];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn theta_path_gradients_match_finite_differences() {
        use crate::gradcheck::{fd_grad, max_rel_err, FD_FLOOR, FD_STEP};
        let mut learner = tiny_learner(7, 20, 8);
        // Phase offset keeps conv inputs away from exact zeros, where the
        // relu subgradient and the finite-difference slope legitimately
        // disagree.
        let series: Vec<Vec<f64>> = (0..3)
            .map(|n| {
                (0..20)
                    .map(|t| ((t + n) as f64 * 0.4 + 0.3).sin())
                    .collect()
            })
            .collect();
        let hv: Vec<f64> = {
            let mut r = rng::root(9);
            (0..3 * 8).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect()
        };
        let target = toy_graph(3, &[(0, 1), (1, 2), (2, 0)]);

        let analytic: Vec<f64> = {
            let mut cx = Ctx::new();
            let g = learner.global_features(&mut cx, &series);
            let h = cx.constant(hv.clone(), &[3, 8]);
            let z = learner.node_embeddings(&mut cx, &h, &g);
            let theta = learner.pairwise_logits(&mut cx, &z);
            let tp = positive_probability(&theta);
            let loss = graph_regularization(&mut cx, &tp, &target);
            loss.backward();
            learner.params().iter().flat_map(|p| cx.grad(p)).collect()
        };

        let total: usize = learner.params().iter().map(|p| p.numel()).sum();
        let numeric = fd_grad(total, FD_STEP, |i, delta| {
            bump(&mut learner, i, delta);
            let mut cx = Ctx::new();
            let g = learner.global_features(&mut cx, &series);
            let h = cx.constant(hv.clone(), &[3, 8]);
            let z = learner.node_embeddings(&mut cx, &h, &g);
            let theta = learner.pairwise_logits(&mut cx, &z);
            let tp = positive_probability(&theta);
            let v = graph_regularization(&mut cx, &tp, &target).scalar_value();
            bump(&mut learner, i, -delta);
            v
        });
        let err = max_rel_err(&analytic, &numeric, FD_FLOOR);
        assert!(err < 1e-4, "max relative error {err}");
    }

    fn bump(learner: &mut GraphLearner, flat: usize, delta: f64) {
        let mut offset = 0;
        for p in learner.params_mut() {
            if flat < offset + p.numel() {
                p.value[flat - offset] += delta;
                return;
            }
            offset += p.numel();
        }
        panic!("flat index {flat} out of range");
    }
}
