//! Forecasting stage: a pluggable spatiotemporal backend consumes the last
//! patch and the sampled dependency graph; the frozen encoder's final-patch
//! representation is fused in through a semantic projector, and a regression
//! head maps the fused hidden state to the forecast horizon.

pub mod backend;
pub mod train;

pub use backend::{Backend, BackendKind, BackendNet, GatedTcnBackend, GraphGruBackend};
pub use train::{evaluate, train, EvalReport, TrainEpochLog, TrainOutcome};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::rng::StepRng;
use crate::tensor::nn::Linear;
use crate::tensor::{Ctx, Param, Tensor};
use serde::{Deserialize, Serialize};

/// Forecast training schedule and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub grad_clip: f64,
    /// Curriculum: the supervised horizon grows by one every cl_num epochs
    /// after warm_num warm-up epochs.
    pub cl_num: usize,
    pub warm_num: usize,
    /// Warm-up trains at the full horizon when true (default), at horizon 1
    /// otherwise.
    pub warmup_full_horizon: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 80,
            batch_size: 32,
            lr: 0.002,
            weight_decay: 1.0e-5,
            eps: 1.0e-8,
            beta1: 0.9,
            beta2: 0.999,
            milestones: vec![1, 18, 36, 54, 72],
            gamma: 0.5,
            grad_clip: 5.0,
            cl_num: 3,
            warm_num: 30,
            warmup_full_horizon: true,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.cl_num == 0 {
            return Err(Error::InvalidConfig("cl_num must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Graph-regularization weight: 1 / ceil(epoch / 6), epochs are 1-based.
pub fn lambda_at(epoch: usize) -> Result<f64> {
    if epoch < 1 {
        return Err(Error::InvalidEpoch(epoch));
    }
    Ok(1.0 / epoch.div_ceil(6) as f64)
}

/// Supervised horizon at `epoch` (1-based): the full horizon during warm-up,
/// then growing by one every `cl_num` epochs, capped at `t_f`.
pub fn curriculum_horizon(schedule: &TrainSchedule, epoch: usize, t_f: usize) -> usize {
    assert!(epoch >= 1, "curriculum_horizon: epochs are 1-based");
    if epoch <= schedule.warm_num {
        return if schedule.warmup_full_horizon { t_f } else { 1 };
    }
    let grown = (epoch - schedule.warm_num - 1) / schedule.cl_num + 1;
    grown.min(t_f)
}

/// Semantic projector plus regression head.
#[derive(Debug, Clone)]
pub struct FusionHead {
    /// Two-layer map d -> d' with ReLU.
    pub sp1: Linear,
    pub sp2: Linear,
    /// Two-layer map d' -> T_f * C, applied per node.
    pub reg1: Linear,
    pub reg2: Linear,
    pub horizon: usize,
    pub channels: usize,
}

impl FusionHead {
    pub fn new(
        rng: &mut StepRng,
        d_model: usize,
        d_prime: usize,
        horizon: usize,
        channels: usize,
    ) -> Self {
        FusionHead {
            sp1: Linear::new(rng, "head.sp1", d_model, d_prime),
            sp2: Linear::new(rng, "head.sp2", d_prime, d_prime),
            reg1: Linear::new(rng, "head.reg1", d_prime, d_prime),
            reg2: Linear::new(rng, "head.reg2", d_prime, horizon * channels),
            horizon,
            channels,
        }
    }

    /// SP(H_P): project the final-patch representation into the backend's
    /// hidden space.
    pub fn project(&self, cx: &mut Ctx, h_p: &Tensor) -> Tensor {
        let hidden = self.sp1.forward(cx, h_p).relu();
        self.sp2.forward(cx, &hidden)
    }

    /// H_final = SP(H_P) + H_gw.
    pub fn fuse(&self, cx: &mut Ctx, h_p: &Tensor, h_gw: &Tensor) -> Tensor {
        assert_eq!(
            h_p.shape()[0],
            h_gw.shape()[0],
            "fuse: node counts differ, {:?} vs {:?}",
            h_p.shape(),
            h_gw.shape()
        );
        assert_eq!(
            h_gw.shape()[1],
            self.sp2.fan_out(),
            "fuse: backend width {:?} does not match projector output {}",
            h_gw.shape(),
            self.sp2.fan_out()
        );
        self.project(cx, h_p).add(h_gw)
    }

    /// Per-node regression: (N, d') -> (N, T_f * C), horizon-major columns.
    pub fn predict(&self, cx: &mut Ctx, h_final: &Tensor) -> Tensor {
        let hidden = self.reg1.forward(cx, h_final).relu();
        self.reg2.forward(cx, &hidden)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.sp1.params();
        out.extend(self.sp2.params());
        out.extend(self.reg1.params());
        out.extend(self.reg2.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.sp1.params_mut();
        out.extend(self.sp2.params_mut());
        out.extend(self.reg1.params_mut());
        out.extend(self.reg2.params_mut());
        out
    }
}

/// De-normalize a (N, T_f*C) prediction tensor on the tape (affine, so
/// gradients pass through).
pub fn denormalize_predictions(
    cx: &mut Ctx,
    pred: &Tensor,
    stats: &NormStats,
    horizon: usize,
    channels: usize,
) -> Tensor {
    let n = pred.shape()[0];
    assert_eq!(
        pred.shape()[1],
        horizon * channels,
        "denormalize: prediction width {:?} does not match T_f*C = {}",
        pred.shape(),
        horizon * channels
    );
    let mut scale_row = Vec::with_capacity(horizon * channels);
    let mut offset_row = Vec::with_capacity(horizon * channels);
    for _ in 0..horizon {
        for c in 0..channels {
            scale_row.push(stats.std[c]);
            offset_row.push(stats.mean[c]);
        }
    }
    let scale = cx.constant(
        scale_row.iter().cycle().take(n * horizon * channels).copied().collect(),
        &[n, horizon * channels],
    );
    let offset = cx.constant(offset_row, &[horizon * channels]);
    pred.mul(&scale).add_row(&offset)
}

/// Mean absolute error over the first `h` horizon steps of node-major
/// (N, T_f*C) predictions and targets; `h = T_f` is the full objective.
pub fn regression_loss(pred: &Tensor, target: &Tensor, h: usize, channels: usize) -> Tensor {
    assert_eq!(
        pred.shape(),
        target.shape(),
        "regression_loss: shape mismatch {:?} vs {:?}",
        pred.shape(),
        target.shape()
    );
    let width = pred.shape()[1];
    assert!(
        h >= 1 && h * channels <= width,
        "regression_loss: horizon {h} (x{channels} channels) out of bounds for width {width}"
    );
    let p = pred.slice_cols(0, h * channels);
    let t = target.slice_cols(0, h * channels);
    p.sub(&t).abs_op().mean()
}

/// Re-layout a time-major (T_f, N, C) target into node-major (N, T_f*C)
/// rows matching the regression head's output.
pub fn target_node_major(target: &[f64], horizon: usize, n: usize, channels: usize) -> Vec<f64> {
    assert_eq!(target.len(), horizon * n * channels);
    let mut out = vec![0.0; target.len()];
    for h in 0..horizon {
        for node in 0..n {
            for c in 0..channels {
                out[node * horizon * channels + h * channels + c] =
                    target[(h * n + node) * channels + c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn lambda_decay_values() {
        assert_eq!(lambda_at(1).unwrap(), 1.0);
        assert_eq!(lambda_at(6).unwrap(), 1.0);
        assert_eq!(lambda_at(7).unwrap(), 0.5);
        assert!((lambda_at(13).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(lambda_at(0).is_err());
    }

    #[test]
    fn curriculum_matches_stated_trio() {
        let s = TrainSchedule::default(); // warm 30, cl 3
        assert_eq!(curriculum_horizon(&s, 30, 12), 12);
        assert_eq!(curriculum_horizon(&s, 31, 12), 1);
        assert_eq!(curriculum_horizon(&s, 34, 12), 2);
        assert_eq!(curriculum_horizon(&s, 64, 12), 12);
        assert_eq!(curriculum_horizon(&s, 200, 12), 12);
    }

    #[test]
    fn curriculum_is_monotone_after_warmup() {
        let s = TrainSchedule::default();
        let mut prev = 0;
        for epoch in 31..150 {
            let h = curriculum_horizon(&s, epoch, 12);
            assert!(h >= prev);
            prev = h;
        }
    }

    #[test]
    fn warmup_mode_length_one() {
        let s = TrainSchedule {
            warmup_full_horizon: false,
            ..Default::default()
        };
        assert_eq!(curriculum_horizon(&s, 5, 12), 1);
        assert_eq!(curriculum_horizon(&s, 31, 12), 1);
    }

    #[test]
    fn fusion_reduces_to_parts() {
        let mut r = rng::root(1);
        let mut head = FusionHead::new(&mut r, 6, 4, 3, 1);
        let mut cx = Ctx::new();
        let h_p = cx.constant(vec![0.2; 2 * 6], &[2, 6]);
        let h_gw = cx.constant(vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.5, -1.0, 2.0], &[2, 4]);

        // SP == 0 -> H_final = H_gw.
        for p in head.sp1.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        for p in head.sp2.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let fused = head.fuse(&mut cx, &h_p, &h_gw);
        assert_eq!(fused.to_vec(), h_gw.to_vec());

        // H_gw == 0 -> H_final = SP(H_P).
        let mut r2 = rng::root(2);
        let head2 = FusionHead::new(&mut r2, 6, 4, 3, 1);
        let zero = cx.constant(vec![0.0; 8], &[2, 4]);
        let fused2 = head2.fuse(&mut cx, &h_p, &zero);
        let sp = head2.project(&mut cx, &h_p);
        assert_eq!(fused2.to_vec(), sp.to_vec());
    }

    #[test]
    fn fusion_matches_direct_formula() {
        let mut r = rng::root(3);
        let head = FusionHead::new(&mut r, 4, 3, 2, 1);
        let mut cx = Ctx::new();
        let hp_vals: Vec<f64> = (0..2 * 4).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let gw_vals: Vec<f64> = (0..2 * 3).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let h_p = cx.constant(hp_vals.clone(), &[2, 4]);
        let h_gw = cx.constant(gw_vals.clone(), &[2, 3]);
        let fused = head.fuse(&mut cx, &h_p, &h_gw).to_vec();
        for node in 0..2 {
            // hidden = relu(W1 h + b1); sp = W2 hidden + b2
            let mut hidden = vec![0.0; 3];
            for o in 0..3 {
                let mut acc = head.sp1.b.value[o];
                for i in 0..4 {
                    acc += head.sp1.w.value[o * 4 + i] * hp_vals[node * 4 + i];
                }
                hidden[o] = acc.max(0.0);
            }
            for o in 0..3 {
                let mut acc = head.sp2.b.value[o];
                for (i, hv) in hidden.iter().enumerate() {
                    acc += head.sp2.w.value[o * 3 + i] * hv;
                }
                let expect = acc + gw_vals[node * 3 + o];
                assert!((fused[node * 3 + o] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prediction_shape_and_zero_head_bias() {
        let mut r = rng::root(4);
        let mut head = FusionHead::new(&mut r, 4, 3, 5, 2);
        let mut cx = Ctx::new();
        let h_final = cx.constant(vec![0.3; 2 * 3], &[2, 3]);
        let pred = head.predict(&mut cx, &h_final);
        assert_eq!(pred.shape(), &[2, 10]);

        for p in head.reg1.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        for p in head.reg2.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        head.reg2.b.value = (0..10).map(|i| i as f64).collect();
        // Fresh context: parameter bindings are cached per Ctx.
        let mut cx = Ctx::new();
        let h_final = cx.constant(vec![0.3; 2 * 3], &[2, 3]);
        let pred = head.predict(&mut cx, &h_final).to_vec();
        for node in 0..2 {
            for j in 0..10 {
                assert_eq!(pred[node * 10 + j], j as f64);
            }
        }
    }

    #[test]
    fn regression_loss_known_values() {
        let mut cx = Ctx::new();
        // T_f = 2, N = 1, C = 1, errors [1, 3], h = 2 -> 2.0.
        let pred = cx.constant(vec![1.0, 3.0], &[1, 2]);
        let target = cx.constant(vec![0.0, 0.0], &[1, 2]);
        assert_eq!(regression_loss(&pred, &target, 2, 1).scalar_value(), 2.0);
        assert_eq!(regression_loss(&pred, &target, 1, 1).scalar_value(), 1.0);
        assert_eq!(regression_loss(&pred, &pred, 2, 1).scalar_value(), 0.0);
    }

    #[test]
    fn regression_loss_matches_triple_sum_oracle() {
        let mut r = rng::root(5);
        let (t_f, n, c) = (4, 3, 2);
        let pv: Vec<f64> = (0..n * t_f * c).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
        let tv: Vec<f64> = (0..n * t_f * c).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
        let mut cx = Ctx::new();
        let pred = cx.constant(pv.clone(), &[n, t_f * c]);
        let target = cx.constant(tv.clone(), &[n, t_f * c]);
        let got = regression_loss(&pred, &target, t_f, c).scalar_value();
        let mut total = 0.0;
        for i in 0..n * t_f * c {
            total += (pv[i] - tv[i]).abs();
        }
        let expect = total / (n * t_f * c) as f64;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn target_layout_round_trip() {
        // (T_f=2, N=2, C=1) time-major [t0n0, t0n1, t1n0, t1n1].
        let tm = vec![1.0, 2.0, 3.0, 4.0];
        let nm = target_node_major(&tm, 2, 2, 1);
        assert_eq!(nm, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn denormalization_round_trips_with_stats() {
        let stats = NormStats {
            mean: vec![10.0],
            std: vec![2.0],
        };
        let mut cx = Ctx::new();
        let pred = cx.constant(vec![0.0, 1.0, -1.0, 0.5], &[2, 2]);
        let out = denormalize_predictions(&mut cx, &pred, &stats, 2, 1).to_vec();
        assert_eq!(out, vec![10.0, 12.0, 8.0, 11.0]);
        for (z, x) in pred.to_vec().iter().zip(&out) {
            assert!((stats.normalize(*x, 0) - z).abs() < 1e-12);
        }
    }
}
