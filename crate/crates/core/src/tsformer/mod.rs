//! Masked-autoencoding pre-training model for long multivariate series.
//!
//! A window of P non-overlapping length-L patches is linearly embedded
//! (U_j = W s_j + b), learnable positional embeddings are added to all
//! patches, and a high masking ratio hides most of them. The encoder runs
//! only on unmasked patches; the lightweight decoder re-assembles the full
//! sequence with a shared mask token standing in at masked slots, and the
//! loss is the mean absolute reconstruction error over masked patches only.

pub mod bank;
pub mod train;

pub use bank::RepresentationBank;
pub use train::{copy_last_baseline, pretrain, unmasked_mean_baseline, validation_loss, PretrainEpochLog, PretrainOutcome, PretrainSettings};

pub use crate::data::MaskSpec;

use crate::error::{Error, Result};
use crate::rng::{self, StepRng};
use crate::tensor::nn::{Linear, TransformerBlock};
use crate::tensor::{Ctx, Param, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TSFormerConfig {
    /// Patch length L (the downstream model's input length).
    pub patch_len: usize,
    /// Patches per window P.
    pub num_patches: usize,
    /// Masking ratio r in (0, 1).
    pub mask_ratio: f64,
    /// Hidden width d.
    pub d_model: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub channels: usize,
}

impl Default for TSFormerConfig {
    fn default() -> Self {
        TSFormerConfig {
            patch_len: 12,
            num_patches: 168,
            mask_ratio: 0.75,
            d_model: 96,
            enc_layers: 4,
            dec_layers: 1,
            heads: 4,
            channels: 1,
        }
    }
}

impl TSFormerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mask_ratio must be in (0,1), got {}",
                self.mask_ratio
            )));
        }
        if self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} must be positive and divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::InvalidConfig(
                "encoder and decoder need at least one layer".into(),
            ));
        }
        if self.patch_len == 0 || self.num_patches < 2 || self.channels == 0 {
            return Err(Error::InvalidConfig(
                "patch_len and channels must be >= 1, num_patches >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn patch_width(&self) -> usize {
        self.patch_len * self.channels
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Uniformly random mask of round(r * P) patches (ties round toward masking
/// more). Degenerate masks (0 or P patches) are rejected.
pub fn sample_mask(rng: &mut StepRng, num_patches: usize, ratio: f64) -> Result<MaskSpec> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "mask ratio must be in (0,1), got {ratio}"
        )));
    }
    let count = (ratio * num_patches as f64).round() as usize;
    if count == 0 || count >= num_patches {
        return Err(Error::DegenerateMask {
            ratio,
            patches: num_patches,
            masked: count,
        });
    }
    let masked = rng::sample_indices(rng, num_patches, count);
    Ok(MaskSpec::from_masked(masked, num_patches))
}

/// The pre-training model parameters.
#[derive(Debug, Clone)]
pub struct TSFormer {
    pub cfg: TSFormerConfig,
    /// Patch embedding: L*C -> d.
    pub embed: Linear,
    /// Learnable positional embeddings, one row per patch position.
    pub pos_emb: Param,
    /// Shared learnable token standing in for every masked patch.
    pub mask_token: Param,
    pub encoder: Vec<TransformerBlock>,
    pub decoder: Vec<TransformerBlock>,
    /// Two-layer output head d -> d -> L*C.
    pub head_hidden: Linear,
    pub head_out: Linear,
}

impl TSFormer {
    pub fn new(cfg: &TSFormerConfig, rng: &mut StepRng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let lc = cfg.patch_width();
        let embed = Linear::new(rng, "tsf.embed", lc, d);
        let pos_values: Vec<f64> = (0..cfg.num_patches * d)
            .map(|_| rng::uniform(rng, -0.02, 0.02))
            .collect();
        let pos_emb = Param::new("tsf.pos_emb", &[cfg.num_patches, d], pos_values);
        let mask_values: Vec<f64> = (0..d)
            .map(|_| rng::truncated_normal(rng, 0.0, 0.02, 2.0))
            .collect();
        let mask_token = Param::new("tsf.mask_token", &[d], mask_values);
        let encoder = (0..cfg.enc_layers)
            .map(|i| TransformerBlock::new(rng, &format!("tsf.enc{i}"), d, cfg.heads))
            .collect();
        let decoder = (0..cfg.dec_layers)
            .map(|i| TransformerBlock::new(rng, &format!("tsf.dec{i}"), d, cfg.heads))
            .collect();
        let head_hidden = Linear::new(rng, "tsf.head_hidden", d, d);
        let head_out = Linear::new(rng, "tsf.head_out", d, lc);
        Ok(TSFormer {
            cfg: cfg.clone(),
            embed,
            pos_emb,
            mask_token,
            encoder,
            decoder,
            head_hidden,
            head_out,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.embed.params();
        out.push(&self.pos_emb);
        out.push(&self.mask_token);
        for b in &self.encoder {
            out.extend(b.params());
        }
        for b in &self.decoder {
            out.extend(b.params());
        }
        out.extend(self.head_hidden.params());
        out.extend(self.head_out.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.embed.params_mut();
        out.push(&mut self.pos_emb);
        out.push(&mut self.mask_token);
        for b in &mut self.encoder {
            out.extend(b.params_mut());
        }
        for b in &mut self.decoder {
            out.extend(b.params_mut());
        }
        out.extend(self.head_hidden.params_mut());
        out.extend(self.head_out.params_mut());
        out
    }

    /// Linear patch embedding U_j = W s_j + b for all P patches.
    /// `patches` is (P, L*C).
    pub fn embed_patches(&self, cx: &mut Ctx, patches: &Tensor) -> Tensor {
        assert_eq!(
            patches.shape()[1],
            self.cfg.patch_width(),
            "embed_patches: patch width {:?} does not match embedding input {}",
            patches.shape(),
            self.cfg.patch_width()
        );
        self.embed.forward(cx, patches)
    }

    /// Add positional embeddings to all patches, then run the encoder over
    /// the unmasked rows only (order-preserving).
    pub fn encode(&self, cx: &mut Ctx, embedded: &Tensor, mask: &MaskSpec) -> Tensor {
        assert!(
            !mask.unmasked.is_empty(),
            "encode: mask leaves no unmasked patches"
        );
        let pos = cx.var(&self.pos_emb);
        let with_pos = embedded.add(&pos);
        let visible = with_pos.gather_rows(&mask.unmasked);
        let mut h = visible;
        for block in &self.encoder {
            h = block.forward(cx, &h);
        }
        h
    }

    /// Encode all P patches with no masking (forecasting-stage convention).
    pub fn encode_full(&self, cx: &mut Ctx, embedded: &Tensor) -> Tensor {
        let pos = cx.var(&self.pos_emb);
        let mut h = embedded.add(&pos);
        for block in &self.encoder {
            h = block.forward(cx, &h);
        }
        h
    }

    /// Assemble the full sequence (encoder outputs at unmasked slots, mask
    /// token + positional embedding at masked slots), run the decoder, and
    /// project every row back to patch space.
    pub fn decode(&self, cx: &mut Ctx, h_unmasked: &Tensor, mask: &MaskSpec) -> Tensor {
        let p = self.cfg.num_patches;
        assert_eq!(
            h_unmasked.shape()[0],
            mask.unmasked.len(),
            "decode: encoder output rows {:?} do not match mask with {} unmasked",
            h_unmasked.shape(),
            mask.unmasked.len()
        );
        let d = self.cfg.d_model;
        let visible = h_unmasked.scatter_rows(p, &mask.unmasked);
        let pos = cx.var(&self.pos_emb);
        let pos_masked = pos.gather_rows(&mask.masked);
        let token = cx.var(&self.mask_token);
        let token_rows = cx
            .tape
            .zeros(&[mask.masked.len(), d])
            .add_row(&token)
            .add(&pos_masked);
        let hidden = token_rows.scatter_rows(p, &mask.masked);
        let mut full = visible.add(&hidden);
        for block in &self.decoder {
            full = block.forward(cx, &full);
        }
        let h = self.head_hidden.forward(cx, &full).relu();
        self.head_out.forward(cx, &h)
    }

    /// Masked-only mean absolute reconstruction error.
    ///
    /// `reconstruction` and `original` are (P, L*C); unmasked rows contribute
    /// nothing by construction.
    pub fn reconstruction_loss(
        cx: &mut Ctx,
        reconstruction: &Tensor,
        original: &Tensor,
        mask: &MaskSpec,
    ) -> Tensor {
        assert_eq!(
            reconstruction.shape(),
            original.shape(),
            "reconstruction_loss: shape mismatch {:?} vs {:?}",
            reconstruction.shape(),
            original.shape()
        );
        assert!(!mask.masked.is_empty(), "reconstruction_loss: empty mask");
        let _ = cx;
        let diff = reconstruction.sub(original).abs_op();
        diff.gather_rows(&mask.masked).mean()
    }

    /// Full masked-autoencoding pass over one window; returns
    /// (reconstruction, loss).
    pub fn forward_masked(
        &self,
        cx: &mut Ctx,
        patches: &Tensor,
        mask: &MaskSpec,
    ) -> (Tensor, Tensor) {
        let u = self.embed_patches(cx, patches);
        let h = self.encode(cx, &u, mask);
        let s_hat = self.decode(cx, &h, mask);
        let loss = Self::reconstruction_loss(cx, &s_hat, patches, mask);
        (s_hat, loss)
    }

    /// Mask-free representations H_1..H_P for one window, (P, d).
    pub fn representations(&self, cx: &mut Ctx, patches: &Tensor) -> Tensor {
        let u = self.embed_patches(cx, patches);
        self.encode_full(cx, &u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny_cfg() -> TSFormerConfig {
        TSFormerConfig {
            patch_len: 4,
            num_patches: 6,
            mask_ratio: 0.5,
            d_model: 8,
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            channels: 1,
        }
    }

    fn tiny_model(seed: u64) -> TSFormer {
        let mut r = rng::root(seed);
        TSFormer::new(&tiny_cfg(), &mut r).unwrap()
    }

    fn random_patches(cx: &Ctx, seed: u64, p: usize, w: usize) -> crate::tensor::Tensor {
        let mut r = rng::root(seed);
        let vals: Vec<f64> = (0..p * w).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        cx.constant(vals, &[p, w])
    }

    #[test]
    fn mask_counts_are_forced() {
        let mut r = rng::root(1);
        let m = sample_mask(&mut r, 4, 0.75).unwrap();
        assert_eq!(m.masked.len(), 3);
        let m = sample_mask(&mut r, 336, 0.75).unwrap();
        assert_eq!(m.masked.len(), 252);
        let m = sample_mask(&mut r, 168, 0.75).unwrap();
        assert_eq!(m.masked.len(), 126);
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        let mut r = rng::root(1);
        assert!(matches!(
            sample_mask(&mut r, 4, 0.05),
            Err(Error::DegenerateMask { .. })
        ));
        assert!(matches!(
            sample_mask(&mut r, 4, 0.95),
            Err(Error::DegenerateMask { .. })
        ));
    }

    #[test]
    fn mask_frequency_is_uniform() {
        // Monte-Carlo: P=8, r=0.5 over 10k draws; each index masked with
        // frequency 0.5 +- 0.02.
        let mut r = rng::split(42, "mask-freq");
        let mut counts = [0usize; 8];
        let draws = 10_000;
        for _ in 0..draws {
            let m = sample_mask(&mut r, 8, 0.5).unwrap();
            for &i in &m.masked {
                counts[i] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.5).abs() <= 0.02, "index {i}: frequency {freq}");
        }
    }

    #[test]
    fn zero_patch_embeds_to_bias() {
        let model = tiny_model(3);
        let mut cx = Ctx::new();
        let patches = cx.constant(vec![0.0; 6 * 4], &[6, 4]);
        let u = model.embed_patches(&mut cx, &patches);
        let b = &model.embed.b.value;
        let got = u.to_vec();
        for row in 0..6 {
            for j in 0..8 {
                assert_eq!(got[row * 8 + j], b[j]);
            }
        }
    }

    #[test]
    fn identity_embedding_passes_patches_through() {
        let mut model = tiny_model(4);
        // W = identity extended (d = 2*patch width here would not be square;
        // use d x LC with ones on the diagonal of the first LC columns).
        let lc = 4;
        let d = 8;
        let mut w = vec![0.0; d * lc];
        for i in 0..lc {
            w[i * lc + i] = 1.0;
        }
        model.embed.w.value = w;
        model.embed.b.value = vec![0.0; d];
        let mut cx = Ctx::new();
        let patches = random_patches(&cx, 5, 6, lc);
        let u = model.embed_patches(&mut cx, &patches);
        let pv = patches.to_vec();
        let uv = u.to_vec();
        for row in 0..6 {
            for j in 0..lc {
                assert_eq!(uv[row * d + j], pv[row * lc + j]);
            }
        }
    }

    #[test]
    fn embedding_matches_direct_matvec_oracle() {
        let model = tiny_model(6);
        let mut cx = Ctx::new();
        let patches = random_patches(&cx, 7, 6, 4);
        let u = model.embed_patches(&mut cx, &patches).to_vec();
        let pv = patches.to_vec();
        for row in 0..6 {
            for o in 0..8 {
                let mut acc = model.embed.b.value[o];
                for i in 0..4 {
                    acc += model.embed.w.value[o * 4 + i] * pv[row * 4 + i];
                }
                assert!((u[row * 8 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_output_rows_match_unmasked_count() {
        let model = tiny_model(8);
        let mut cx = Ctx::new();
        let patches = random_patches(&cx, 9, 6, 4);
        let mask = MaskSpec::from_masked(vec![0, 2, 5], 6);
        let u = model.embed_patches(&mut cx, &patches);
        let h = model.encode(&mut cx, &u, &mask);
        assert_eq!(h.shape(), &[3, 8]);
    }

    #[test]
    fn identical_patches_with_zero_pos_give_identical_rows() {
        let mut model = tiny_model(10);
        model.pos_emb.value = vec![0.0; 6 * 8];
        let mut cx = Ctx::new();
        let one_patch = vec![0.4, -0.2, 0.9, 0.1];
        let patches = cx.constant(one_patch.repeat(6), &[6, 4]);
        let mask = MaskSpec::from_masked(vec![1, 4], 6);
        let u = model.embed_patches(&mut cx, &patches);
        let h = model.encode(&mut cx, &u, &mask).to_vec();
        for row in 1..4 {
            for j in 0..8 {
                assert!((h[row * 8 + j] - h[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant_with_zero_pos() {
        let mut model = tiny_model(11);
        model.pos_emb.value = vec![0.0; 6 * 8];
        let mask = MaskSpec::from_masked(vec![4, 5], 6);

        let run = |perm: &[usize]| -> Vec<f64> {
            let mut cx = Ctx::new();
            let mut r = rng::root(77);
            let base: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..4).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect())
                .collect();
            let flat: Vec<f64> = perm.iter().flat_map(|&i| base[i].clone()).collect();
            let patches = cx.constant(flat, &[6, 4]);
            let u = model.embed_patches(&mut cx, &patches);
            model.encode(&mut cx, &u, &mask).to_vec()
        };

        let id_out = run(&[0, 1, 2, 3, 4, 5]);
        // Permute the four unmasked inputs (positions 0..4); masked rows stay.
        let perm_out = run(&[2, 0, 3, 1, 4, 5]);
        let perm = [2usize, 0, 3, 1];
        for (new_row, &old_row) in perm.iter().enumerate() {
            for j in 0..8 {
                assert!(
                    (perm_out[new_row * 8 + j] - id_out[old_row * 8 + j]).abs() < 1e-12,
                    "row {new_row} vs original {old_row}"
                );
            }
        }
    }

    #[test]
    fn decode_produces_full_reconstruction() {
        let model = tiny_model(12);
        let mut cx = Ctx::new();
        let patches = random_patches(&cx, 13, 6, 4);
        let mask = MaskSpec::from_masked(vec![0, 3, 4], 6);
        let (s_hat, _) = model.forward_masked(&mut cx, &patches, &mask);
        assert_eq!(s_hat.shape(), &[6, 4]);
    }

    #[test]
    fn masked_slots_differ_when_positions_differ() {
        // The mask token is shared; positional embeddings distinguish slots.
        let model = tiny_model(14);
        let mask = MaskSpec::from_masked(vec![1, 2], 6);
        let d = 8;
        let pos1 = &model.pos_emb.value[d..2 * d];
        let pos2 = &model.pos_emb.value[2 * d..3 * d];
        assert_ne!(pos1, pos2);
        let slot1: Vec<f64> = model
            .mask_token
            .value
            .iter()
            .zip(pos1)
            .map(|(m, p)| m + p)
            .collect();
        let slot2: Vec<f64> = model
            .mask_token
            .value
            .iter()
            .zip(pos2)
            .map(|(m, p)| m + p)
            .collect();
        assert_ne!(slot1, slot2);
        let _ = mask;
    }

    #[test]
    fn unmasked_perturbation_reaches_masked_output() {
        let model = tiny_model(15);
        let mask = MaskSpec::from_masked(vec![0, 3, 4], 6);
        let run = |bump: f64| -> Vec<f64> {
            let mut cx = Ctx::new();
            let mut r = rng::root(99);
            let mut vals: Vec<f64> =
                (0..24).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
            vals[1 * 4 + 2] += bump; // patch 1 is unmasked
            let patches = cx.constant(vals, &[6, 4]);
            let (s_hat, _) = model.forward_masked(&mut cx, &patches, &mask);
            s_hat.to_vec()
        };
        let base = run(0.0);
        let bumped = run(0.5);
        let w = 4;
        let masked_changed = mask
            .masked
            .iter()
            .any(|&j| (0..w).any(|c| (base[j * w + c] - bumped[j * w + c]).abs() > 1e-9));
        assert!(masked_changed, "attention should mix unmasked info into masked slots");
    }

    #[test]
    fn loss_ignores_unmasked_entries() {
        let model = tiny_model(16);
        let mask = MaskSpec::from_masked(vec![2, 5], 6);
        let mut cx = Ctx::new();
        let original = random_patches(&cx, 21, 6, 4);
        let mut recon_vals = original.to_vec();
        // Garbage at unmasked rows, exact at masked rows.
        for &u in &mask.unmasked {
            for c in 0..4 {
                recon_vals[u * 4 + c] += 1000.0;
            }
        }
        let recon = cx.constant(recon_vals, &[6, 4]);
        let loss = TSFormer::reconstruction_loss(&mut cx, &recon, &original, &mask);
        assert_eq!(loss.scalar_value(), 0.0);
        let _ = model;
    }

    #[test]
    fn constant_error_on_single_masked_patch() {
        let mut cx = Ctx::new();
        let original = cx.constant(vec![0.0; 6 * 4], &[6, 4]);
        let mut recon_vals = vec![0.0; 6 * 4];
        for c in 0..4 {
            recon_vals[3 * 4 + c] = 2.0;
        }
        let recon = cx.constant(recon_vals, &[6, 4]);
        let mask = MaskSpec::from_masked(vec![3], 6);
        let loss = TSFormer::reconstruction_loss(&mut cx, &recon, &original, &mask);
        assert_eq!(loss.scalar_value(), 2.0);
    }

    #[test]
    fn loss_matches_brute_force_oracle() {
        let mut cx = Ctx::new();
        let a = random_patches(&cx, 31, 6, 4);
        let b = random_patches(&cx, 32, 6, 4);
        let mask = MaskSpec::from_masked(vec![0, 2, 3], 6);
        let loss = TSFormer::reconstruction_loss(&mut cx, &a, &b, &mask).scalar_value();
        let av = a.to_vec();
        let bv = b.to_vec();
        let mut total = 0.0;
        for &j in &mask.masked {
            for c in 0..4 {
                total += (av[j * 4 + c] - bv[j * 4 + c]).abs();
            }
        }
        let expect = total / (mask.masked.len() * 4) as f64;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "empty mask")]
    fn loss_rejects_empty_mask() {
        let mut cx = Ctx::new();
        let a = cx.constant(vec![0.0; 8], &[2, 4]);
        let b = cx.constant(vec![0.0; 8], &[2, 4]);
        let mask = MaskSpec::from_masked(vec![], 2);
        let _ = TSFormer::reconstruction_loss(&mut cx, &a, &b, &mask);
    }

    #[test]
    fn encode_full_is_deterministic_and_differs_from_masked() {
        let model = tiny_model(18);
        let mut cx = Ctx::new();
        let patches = random_patches(&cx, 41, 6, 4);
        let h1 = model.representations(&mut cx, &patches);
        let mut cx2 = Ctx::new();
        let patches2 = random_patches(&cx2, 41, 6, 4);
        let h2 = model.representations(&mut cx2, &patches2);
        assert_eq!(h1.to_vec(), h2.to_vec());
        assert_eq!(h1.shape(), &[6, 8]);

        // Last patch's representation under full context differs from its
        // representation under a heavy mask.
        let mask = MaskSpec::from_masked(vec![0, 1, 2, 3], 6);
        let mut cx3 = Ctx::new();
        let patches3 = random_patches(&cx3, 41, 6, 4);
        let u = model.embed_patches(&mut cx3, &patches3);
        let h_masked = model.encode(&mut cx3, &u, &mask);
        let full = h1.to_vec();
        let masked = h_masked.to_vec();
        // Unmasked rows are 4 and 5; compare the final patch (row 5 full,
        // row 1 of the masked output).
        let d = 8;
        let gap: f64 = (0..d)
            .map(|j| (full[5 * d + j] - masked[1 * d + j]).abs())
            .sum();
        assert!(gap > 1e-9, "masking should change context-dependent reps");
    }
}
