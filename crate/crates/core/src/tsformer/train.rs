//! Pre-training loop: masked reconstruction over sliding windows, AdamW
//! with a multi-step schedule, gradient clipping, and best-validation
//! checkpoint selection.

use super::{sample_mask, MaskSpec, TSFormer, TSFormerConfig};
use crate::data::{make_pretrain_windows, make_trailing_windows, PatchWindow, RawDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::optim::{clip_gradients, LrSchedule, OptimizerState};
use crate::tensor::Ctx;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSettings {
    pub epochs: usize,
    /// Window stride in steps; defaults to the patch length so patches stay
    /// aligned across windows.
    pub stride: Option<usize>,
    pub base_lr: f64,
    /// Linear scaling rule lr = base_lr * (batch_size / 8); the batch unit
    /// is one window per node.
    pub lr_batch_scaling: bool,
    pub weight_decay: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub grad_clip: f64,
    /// Fixed seed for validation masks so model selection is stable.
    pub val_mask_seed: u64,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        PretrainSettings {
            epochs: 50,
            stride: None,
            base_lr: 5.0e-4,
            lr_batch_scaling: true,
            weight_decay: 0.0,
            eps: 1.0e-8,
            beta1: 0.9,
            beta2: 0.95,
            milestones: vec![50],
            gamma: 0.5,
            grad_clip: 5.0,
            val_mask_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainEpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct PretrainOutcome {
    /// Model restored to the best-validation epoch.
    pub model: TSFormer,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub log: Vec<PretrainEpochLog>,
}

fn window_tensor(cx: &Ctx, w: &PatchWindow) -> crate::tensor::Tensor {
    cx.constant(
        w.patches.clone(),
        &[w.num_patches, w.patch_len * w.channels],
    )
}

fn masked_loss_only(model: &TSFormer, w: &PatchWindow, mask: &MaskSpec) -> f64 {
    let mut cx = Ctx::new();
    let patches = window_tensor(&cx, w);
    let (_, loss) = model.forward_masked(&mut cx, &patches, mask);
    loss.scalar_value()
}

/// Mean masked reconstruction loss over `windows` with masks drawn from a
/// fixed seed (one deterministic mask per window index).
pub fn validation_loss(
    model: &TSFormer,
    windows: &[PatchWindow],
    mask_seed: u64,
) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let cfg = &model.cfg;
    let masks: Vec<MaskSpec> = (0..windows.len())
        .map(|i| {
            let mut r = rng::split_indexed(mask_seed, "val-mask", i);
            sample_mask(&mut r, cfg.num_patches, cfg.mask_ratio)
        })
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = windows
        .par_iter()
        .zip(masks.par_iter())
        .map(|(w, m)| masked_loss_only(model, w, m))
        .collect();
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Pre-train on windows strictly inside the training range; validation uses
/// windows whose final step lands in the validation range (their history may
/// reach back into training data, which the model has already seen).
pub fn pretrain(
    cfg: &TSFormerConfig,
    settings: &PretrainSettings,
    ds: &RawDataset,
    split: &SplitSpec,
    seed: u64,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let stride = settings.stride.unwrap_or(cfg.patch_len);
    let p = cfg.num_patches;
    let l = cfg.patch_len;
    let train_windows = make_pretrain_windows(ds, split.train.clone(), p, l, stride)?;
    let val_windows = if split.val.is_empty() {
        Vec::new()
    } else {
        make_trailing_windows(ds, split.val.clone(), p, l, stride)?
    };

    let mut init_rng = rng::split(seed, "tsformer/init");
    let mut model = TSFormer::new(cfg, &mut init_rng)?;

    if settings.epochs == 0 {
        return Ok(PretrainOutcome {
            best_epoch: 0,
            best_val_loss: f64::NAN,
            log: Vec::new(),
            model,
        });
    }

    // Group windows into batches: all nodes sharing a window start.
    let mut starts: Vec<usize> = train_windows.iter().map(|w| w.start).collect();
    starts.sort_unstable();
    starts.dedup();
    let batches: Vec<Vec<usize>> = starts
        .iter()
        .map(|&s| {
            train_windows
                .iter()
                .enumerate()
                .filter(|(_, w)| w.start == s)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let batch_size = ds.num_nodes;

    let schedule = LrSchedule::new(settings.base_lr, settings.milestones.clone(), settings.gamma);
    let lr_scale = if settings.lr_batch_scaling {
        batch_size as f64 / 8.0
    } else {
        1.0
    };
    let mut opt = OptimizerState::adamw(
        &model.params(),
        settings.base_lr,
        settings.weight_decay,
        settings.eps,
        (settings.beta1, settings.beta2),
    );

    let mut mask_rng = rng::split(seed, "tsformer/mask");
    let mut order_rng = rng::split(seed, "tsformer/order");

    let mut log = Vec::with_capacity(settings.epochs);
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut best_values: Vec<Vec<f64>> = model.params().iter().map(|p| p.value.clone()).collect();

    for epoch in 1..=settings.epochs {
        opt.lr = schedule.lr_at(epoch) * lr_scale;
        let mut order: Vec<usize> = (0..batches.len()).collect();
        rng::shuffle(&mut order_rng, &mut order);

        let mut train_loss_sum = 0.0;
        for (step, &bi) in order.iter().enumerate() {
            let batch = &batches[bi];
            let masks: Vec<MaskSpec> = batch
                .iter()
                .map(|_| sample_mask(&mut mask_rng, p, cfg.mask_ratio))
                .collect::<Result<_>>()?;

            // Independent tapes per window; gradients averaged in batch order.
            let results: Vec<(f64, Vec<Vec<f64>>)> = batch
                .par_iter()
                .zip(masks.par_iter())
                .map(|(&wi, mask)| {
                    let w = &train_windows[wi];
                    let mut cx = Ctx::new();
                    let patches = window_tensor(&cx, w);
                    let (_, loss) = model.forward_masked(&mut cx, &patches, mask);
                    loss.backward();
                    let grads: Vec<Vec<f64>> =
                        model.params().iter().map(|p| cx.grad(p)).collect();
                    (loss.scalar_value(), grads)
                })
                .collect();

            let batch_loss: f64 =
                results.iter().map(|(l, _)| l).sum::<f64>() / batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: step });
            }
            train_loss_sum += batch_loss;

            let n_params = model.params().len();
            let mut grads: Vec<Vec<f64>> = (0..n_params)
                .map(|pi| vec![0.0; results[0].1[pi].len()])
                .collect();
            let inv = 1.0 / batch.len() as f64;
            for (_, g) in &results {
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, b) in acc.iter_mut().zip(gi) {
                        *a += b * inv;
                    }
                }
            }
            clip_gradients(&mut grads, settings.grad_clip);
            let mut params = model.params_mut();
            opt.step(&mut params, &grads);
        }

        let train_loss = train_loss_sum / batches.len() as f64;
        let val_loss = if val_windows.is_empty() {
            train_loss
        } else {
            validation_loss(&model, &val_windows, settings.val_mask_seed)?
        };
        log.push(PretrainEpochLog {
            epoch,
            lr: opt.lr,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_values = model.params().iter().map(|p| p.value.clone()).collect();
        }
    }

    for (param, values) in model.params_mut().into_iter().zip(best_values) {
        param.value = values;
    }
    Ok(PretrainOutcome {
        model,
        best_epoch,
        best_val_loss: best_val,
        log,
    })
}

/// Copy-last-unmasked-patch baseline: each masked patch is predicted by the
/// nearest unmasked patch before it (or after, when none precedes it).
/// Returns the mean absolute error over masked entries.
pub fn copy_last_baseline(w: &PatchWindow, mask: &MaskSpec) -> f64 {
    let width = w.patch_len * w.channels;
    let mut total = 0.0;
    let mut count = 0usize;
    for &j in &mask.masked {
        let before = mask.unmasked.iter().rev().find(|&&u| u < j);
        let source = match before {
            Some(&u) => u,
            None => *mask
                .unmasked
                .iter()
                .find(|&&u| u > j)
                .expect("mask must leave at least one unmasked patch"),
        };
        let truth = w.patch(j);
        let guess = w.patch(source);
        for c in 0..width {
            total += (guess[c] - truth[c]).abs();
            count += 1;
        }
    }
    total / count as f64
}

/// Unmasked-mean baseline: every masked entry is predicted by the scalar
/// mean of all unmasked entries in the window.
pub fn unmasked_mean_baseline(w: &PatchWindow, mask: &MaskSpec) -> f64 {
    let mut mean = 0.0;
    let mut n = 0usize;
    for &u in &mask.unmasked {
        for &v in w.patch(u) {
            mean += v;
            n += 1;
        }
    }
    mean /= n as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for &j in &mask.masked {
        for &v in w.patch(j) {
            total += (mean - v).abs();
            count += 1;
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::data::SyntheticSpec;

    fn tiny_setup() -> (RawDataset, SplitSpec, TSFormerConfig) {
        let (ds, _) = generate_synthetic(&SyntheticSpec {
            seed: 5,
            nodes: 3,
            days: 14,
            steps_per_day: 12,
            k_planted: 1,
            noise_sd: 0.0,
            coupling: 0.0,
            weekend_factor: 1.0,
        })
        .unwrap();
        let split = SplitSpec::new(ds.num_steps, 0.7, 0.1, 0.2).unwrap();
        let cfg = TSFormerConfig {
            patch_len: 4,
            num_patches: 12,
            mask_ratio: 0.75,
            d_model: 8,
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            channels: 1,
        };
        (ds, split, cfg)
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (ds, split, cfg) = tiny_setup();
        let settings = PretrainSettings {
            epochs: 0,
            ..Default::default()
        };
        let out = pretrain(&cfg, &settings, &ds, &split, 3).unwrap();
        let mut r = rng::split(3, "tsformer/init");
        let fresh = TSFormer::new(&cfg, &mut r).unwrap();
        for (a, b) in out.model.params().iter().zip(fresh.params()) {
            assert_eq!(a.value, b.value);
        }
        assert!(out.log.is_empty());
    }

    #[test]
    fn short_pretrain_logs_and_improves() {
        let (ds, split, cfg) = tiny_setup();
        let settings = PretrainSettings {
            epochs: 4,
            base_lr: 1e-3,
            ..Default::default()
        };
        let out = pretrain(&cfg, &settings, &ds, &split, 3).unwrap();
        assert_eq!(out.log.len(), 4);
        // Best-epoch validation loss never exceeds the first epoch's.
        let first = out.log[0].val_loss;
        assert!(out.best_val_loss <= first);
        assert!(out.best_epoch >= 1);
    }

    #[test]
    fn pretrain_is_deterministic() {
        let (ds, split, cfg) = tiny_setup();
        let settings = PretrainSettings {
            epochs: 2,
            ..Default::default()
        };
        let a = pretrain(&cfg, &settings, &ds, &split, 9).unwrap();
        let b = pretrain(&cfg, &settings, &ds, &split, 9).unwrap();
        for (pa, pb) in a.model.params().iter().zip(b.model.params()) {
            assert_eq!(pa.value, pb.value);
        }
        assert_eq!(a.log.len(), b.log.len());
        for (la, lb) in a.log.iter().zip(&b.log) {
            assert_eq!(la.train_loss, lb.train_loss);
            assert_eq!(la.val_loss, lb.val_loss);
        }
    }

    #[test]
    fn baselines_are_finite_and_positive_on_periodic_data() {
        let (ds, split, cfg) = tiny_setup();
        let windows =
            make_pretrain_windows(&ds, split.train.clone(), cfg.num_patches, cfg.patch_len, 4)
                .unwrap();
        let mut r = rng::root(0);
        let mask = sample_mask(&mut r, cfg.num_patches, cfg.mask_ratio).unwrap();
        let copy = copy_last_baseline(&windows[0], &mask);
        let mean = unmasked_mean_baseline(&windows[0], &mask);
        assert!(copy.is_finite() && copy > 0.0);
        assert!(mean.is_finite() && mean > 0.0);
    }
}
