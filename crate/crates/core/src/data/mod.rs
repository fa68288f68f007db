//! Dataset container, normalization, chronological splitting, and
//! window/patch enumeration.
//!
//! A dataset is a T x N x C array (time-major, then node, then channel).
//! Values are kept at 32-bit precision on disk (see [`container`]) and
//! widened to f64 in memory.

pub mod container;
pub mod synthetic;

pub use container::{import_csv, load_dataset, save_dataset};
pub use synthetic::{generate_synthetic, PlantedGraph, SyntheticSpec};

use crate::error::{Error, Result};
use std::ops::Range;

/// Per-channel z-score statistics fitted on the training range.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn normalize(&self, x: f64, channel: usize) -> f64 {
        (x - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize(&self, z: f64, channel: usize) -> f64 {
        z * self.std[channel] + self.mean[channel]
    }
}

/// The multivariate series plus metadata.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub name: String,
    pub steps_per_day: usize,
    pub num_steps: usize,
    pub num_nodes: usize,
    pub num_channels: usize,
    /// Row-major, index order (t, node, channel).
    pub values: Vec<f64>,
    /// Parallel missing flags; all false by default.
    pub missing: Vec<bool>,
    pub channel_names: Vec<String>,
    /// Present once `fit_apply_zscore` has run; derives only from the
    /// training range.
    pub norm_stats: Option<NormStats>,
}

impl RawDataset {
    pub fn new(
        name: impl Into<String>,
        steps_per_day: usize,
        num_steps: usize,
        num_nodes: usize,
        num_channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if num_steps == 0 || num_nodes == 0 || num_channels == 0 {
            return Err(Error::InvalidConfig(format!(
                "dataset dimensions must be >= 1, got T={num_steps} N={num_nodes} C={num_channels}"
            )));
        }
        if values.len() != num_steps * num_nodes * num_channels {
            return Err(Error::InvalidConfig(format!(
                "value count {} does not match T*N*C = {}",
                values.len(),
                num_steps * num_nodes * num_channels
            )));
        }
        let len = values.len();
        Ok(RawDataset {
            name: name.into(),
            steps_per_day,
            num_steps,
            num_nodes,
            num_channels,
            values,
            missing: vec![false; len],
            channel_names: (0..num_channels).map(|c| format!("ch{c}")).collect(),
            norm_stats: None,
        })
    }

    #[inline]
    pub fn idx(&self, t: usize, node: usize, channel: usize) -> usize {
        (t * self.num_nodes + node) * self.num_channels + channel
    }

    #[inline]
    pub fn at(&self, t: usize, node: usize, channel: usize) -> f64 {
        self.values[self.idx(t, node, channel)]
    }

    /// One node's series for one channel over `range`.
    pub fn series(&self, node: usize, channel: usize, range: Range<usize>) -> Vec<f64> {
        range.map(|t| self.at(t, node, channel)).collect()
    }
}

// ── chronological splits ─────────────────────────────────────────────

/// Contiguous train/val/test ranges covering [0, T).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    /// Resolve fractions (must sum to 1) into chronological ranges:
    /// train, then val, then test.
    pub fn new(num_steps: usize, train_frac: f64, val_frac: f64, test_frac: f64) -> Result<Self> {
        let sum = train_frac + val_frac + test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!(
                "fractions sum to {sum}, expected 1"
            )));
        }
        if train_frac <= 0.0 || val_frac < 0.0 || test_frac < 0.0 {
            return Err(Error::InvalidSplit(
                "train fraction must be positive; val/test non-negative".into(),
            ));
        }
        let train_end = (num_steps as f64 * train_frac).floor() as usize;
        let val_end = train_end + (num_steps as f64 * val_frac).floor() as usize;
        if train_end == 0 || val_end > num_steps {
            return Err(Error::InvalidSplit(format!(
                "resolved ranges degenerate for T={num_steps}"
            )));
        }
        Ok(SplitSpec {
            train: 0..train_end,
            val: train_end..val_end,
            test: val_end..num_steps,
        })
    }
}

// ── normalization ────────────────────────────────────────────────────

/// Fit per-channel z-score statistics on the training range only and apply
/// them to the whole dataset. Missing entries are excluded from the fit and
/// left untouched.
pub fn fit_apply_zscore(ds: &RawDataset, split: &SplitSpec) -> Result<RawDataset> {
    let c = ds.num_channels;
    let mut mean = vec![0.0; c];
    let mut count = vec![0usize; c];
    for t in split.train.clone() {
        for n in 0..ds.num_nodes {
            for ch in 0..c {
                let i = ds.idx(t, n, ch);
                if !ds.missing[i] {
                    mean[ch] += ds.values[i];
                    count[ch] += 1;
                }
            }
        }
    }
    for ch in 0..c {
        if count[ch] == 0 {
            return Err(Error::DegenerateChannel { channel: ch });
        }
        mean[ch] /= count[ch] as f64;
    }
    let mut var = vec![0.0; c];
    for t in split.train.clone() {
        for n in 0..ds.num_nodes {
            for ch in 0..c {
                let i = ds.idx(t, n, ch);
                if !ds.missing[i] {
                    let d = ds.values[i] - mean[ch];
                    var[ch] += d * d;
                }
            }
        }
    }
    let mut std = vec![0.0; c];
    for ch in 0..c {
        std[ch] = (var[ch] / count[ch] as f64).sqrt();
        if std[ch] == 0.0 {
            return Err(Error::DegenerateChannel { channel: ch });
        }
    }
    let stats = NormStats { mean, std };
    let mut out = ds.clone();
    for t in 0..ds.num_steps {
        for n in 0..ds.num_nodes {
            for ch in 0..c {
                let i = ds.idx(t, n, ch);
                if !ds.missing[i] {
                    out.values[i] = stats.normalize(ds.values[i], ch);
                }
            }
        }
    }
    out.norm_stats = Some(stats);
    Ok(out)
}

// ── masking (shared type; sampling lives with the pre-training model) ─

/// A partition of patch indices {0..P} into masked and unmasked sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    pub masked: Vec<usize>,
    pub unmasked: Vec<usize>,
    pub num_patches: usize,
}

impl MaskSpec {
    pub fn from_masked(masked: Vec<usize>, num_patches: usize) -> Self {
        debug_assert!(masked.windows(2).all(|w| w[0] < w[1]));
        let set: std::collections::HashSet<usize> = masked.iter().copied().collect();
        let unmasked = (0..num_patches).filter(|i| !set.contains(i)).collect();
        MaskSpec {
            masked,
            unmasked,
            num_patches,
        }
    }

    pub fn is_masked(&self, patch: usize) -> bool {
        self.masked.binary_search(&patch).is_ok()
    }
}

// ── windows and samples ──────────────────────────────────────────────

/// One node's window of P non-overlapping length-L patches.
#[derive(Debug, Clone)]
pub struct PatchWindow {
    pub node: usize,
    /// First time step covered by patch 0.
    pub start: usize,
    pub num_patches: usize,
    pub patch_len: usize,
    pub channels: usize,
    /// Row j holds patch j flattened to L*C entries (step-major).
    pub patches: Vec<f64>,
    pub mask: Option<MaskSpec>,
}

impl PatchWindow {
    pub fn patch(&self, j: usize) -> &[f64] {
        let w = self.patch_len * self.channels;
        &self.patches[j * w..(j + 1) * w]
    }
}

fn extract_window(ds: &RawDataset, node: usize, start: usize, p: usize, l: usize) -> PatchWindow {
    let c = ds.num_channels;
    let mut patches = Vec::with_capacity(p * l * c);
    for step in 0..p * l {
        for ch in 0..c {
            patches.push(ds.at(start + step, node, ch));
        }
    }
    PatchWindow {
        node,
        start,
        num_patches: p,
        patch_len: l,
        channels: c,
        patches,
        mask: None,
    }
}

/// Enumerate pre-training windows strictly inside `range`, for every node:
/// starts at range.start, range.start+stride, ... with start + P*L <= range.end.
pub fn make_pretrain_windows(
    ds: &RawDataset,
    range: Range<usize>,
    p: usize,
    l: usize,
    stride: usize,
) -> Result<Vec<PatchWindow>> {
    assert!(stride >= 1, "make_pretrain_windows: stride must be >= 1");
    let span = p * l;
    let available = range.len();
    if span > available {
        return Err(Error::WindowTooLong {
            window: span,
            available,
        });
    }
    let mut out = Vec::new();
    for node in 0..ds.num_nodes {
        let mut start = range.start;
        while start + span <= range.end {
            out.push(extract_window(ds, node, start, p, l));
            start += stride;
        }
    }
    Ok(out)
}

/// Enumerate evaluation windows whose final step lands in `range`, allowing
/// the history to extend back into earlier data. Used for validation during
/// pre-training, where a full window rarely fits inside the validation range.
pub fn make_trailing_windows(
    ds: &RawDataset,
    range: Range<usize>,
    p: usize,
    l: usize,
    stride: usize,
) -> Result<Vec<PatchWindow>> {
    assert!(stride >= 1, "make_trailing_windows: stride must be >= 1");
    let span = p * l;
    if span > ds.num_steps {
        return Err(Error::WindowTooLong {
            window: span,
            available: ds.num_steps,
        });
    }
    let mut out = Vec::new();
    for node in 0..ds.num_nodes {
        // Window end positions inside (range.start, range.end].
        let mut end = range.end;
        while end > range.start && end >= span {
            out.push(extract_window(ds, node, end - span, p, l));
            if end < stride {
                break;
            }
            end -= stride;
        }
    }
    out.sort_by_key(|w| (w.node, w.start));
    Ok(out)
}

/// One forecasting sample: last patch per node plus the future target.
#[derive(Debug, Clone)]
pub struct ForecastSample {
    /// Start of the window of P patches; the window covers
    /// [long_history_start, long_history_start + P*L).
    pub long_history_start: usize,
    /// (N, L*C): row n holds node n's final patch, step-major.
    pub history: Vec<f64>,
    /// (T_f, N, C), time-major like the dataset.
    pub target: Vec<f64>,
}

impl ForecastSample {
    /// First predicted time step.
    pub fn target_start(&self, p: usize, l: usize) -> usize {
        self.long_history_start + p * l
    }
}

fn extract_sample(
    ds: &RawDataset,
    t0: usize,
    p: usize,
    l: usize,
    horizon: usize,
) -> ForecastSample {
    let c = ds.num_channels;
    let last_start = t0 + (p - 1) * l;
    let mut history = Vec::with_capacity(ds.num_nodes * l * c);
    for node in 0..ds.num_nodes {
        for step in 0..l {
            for ch in 0..c {
                history.push(ds.at(last_start + step, node, ch));
            }
        }
    }
    let t_target = t0 + p * l;
    let mut target = Vec::with_capacity(horizon * ds.num_nodes * c);
    for h in 0..horizon {
        for node in 0..ds.num_nodes {
            for ch in 0..c {
                target.push(ds.at(t_target + h, node, ch));
            }
        }
    }
    ForecastSample {
        long_history_start: t0,
        history,
        target,
    }
}

/// Stride-1 forecasting samples fully inside `range` (training placement:
/// history and target both stay in the range).
pub fn make_forecast_samples(
    ds: &RawDataset,
    range: Range<usize>,
    p: usize,
    l: usize,
    horizon: usize,
) -> Result<Vec<ForecastSample>> {
    let span = p * l + horizon;
    if span > range.len() {
        return Err(Error::WindowTooLong {
            window: span,
            available: range.len(),
        });
    }
    let mut out = Vec::new();
    let mut t0 = range.start;
    while t0 + span <= range.end {
        out.push(extract_sample(ds, t0, p, l, horizon));
        t0 += 1;
    }
    Ok(out)
}

/// Stride-1 forecasting samples whose target lies in `range` while the long
/// history may extend back into earlier chronological data. Evaluation
/// placement for validation/test ranges shorter than a full window.
pub fn make_forecast_samples_crossing(
    ds: &RawDataset,
    range: Range<usize>,
    p: usize,
    l: usize,
    horizon: usize,
) -> Result<Vec<ForecastSample>> {
    let hist = p * l;
    if hist + horizon > ds.num_steps {
        return Err(Error::WindowTooLong {
            window: hist + horizon,
            available: ds.num_steps,
        });
    }
    let mut out = Vec::new();
    // Target start ranges over [max(range.start, hist), range.end - horizon].
    let lo = range.start.max(hist);
    let mut ts = lo;
    while ts + horizon <= range.end {
        out.push(extract_sample(ds, ts - hist, p, l, horizon));
        ts += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(t: usize, n: usize, c: usize) -> RawDataset {
        let values: Vec<f64> = (0..t * n * c).map(|i| i as f64).collect();
        RawDataset::new("toy", 4, t, n, c, values).unwrap()
    }

    #[test]
    fn split_is_chronological_and_covers() {
        let s = SplitSpec::new(100, 0.7, 0.1, 0.2).unwrap();
        assert_eq!(s.train, 0..70);
        assert_eq!(s.val, 70..80);
        assert_eq!(s.test, 80..100);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        assert!(SplitSpec::new(100, 0.5, 0.1, 0.2).is_err());
    }

    #[test]
    fn zscore_uses_training_range_only() {
        let mut ds = toy_dataset(4, 1, 1);
        ds.values = vec![0.0, 2.0, 100.0, -50.0];
        let split = SplitSpec::new(4, 0.5, 0.25, 0.25).unwrap();
        let normed = fit_apply_zscore(&ds, &split).unwrap();
        let stats = normed.norm_stats.as_ref().unwrap();
        assert!((stats.mean[0] - 1.0).abs() < 1e-12);
        assert!((stats.std[0] - 1.0).abs() < 1e-12);
        assert!((normed.values[0] + 1.0).abs() < 1e-12);
        assert!((normed.values[1] - 1.0).abs() < 1e-12);

        // Mutating val/test contents leaves the fitted stats unchanged.
        let mut ds2 = ds.clone();
        ds2.values[2] = 9e9;
        ds2.values[3] = -9e9;
        let normed2 = fit_apply_zscore(&ds2, &split).unwrap();
        assert_eq!(normed2.norm_stats, normed.norm_stats);
    }

    #[test]
    fn zscore_round_trip_is_identity() {
        let ds = toy_dataset(10, 2, 1);
        let split = SplitSpec::new(10, 0.6, 0.2, 0.2).unwrap();
        let normed = fit_apply_zscore(&ds, &split).unwrap();
        let stats = normed.norm_stats.as_ref().unwrap();
        for t in 0..10 {
            for n in 0..2 {
                let back = stats.denormalize(normed.at(t, n, 0), 0);
                assert!((back - ds.at(t, n, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zscore_rejects_constant_channel() {
        let mut ds = toy_dataset(4, 1, 1);
        ds.values = vec![3.0; 4];
        let split = SplitSpec::new(4, 0.5, 0.25, 0.25).unwrap();
        match fit_apply_zscore(&ds, &split) {
            Err(Error::DegenerateChannel { channel: 0 }) => {}
            other => panic!("expected degenerate channel, got {other:?}"),
        }
    }

    #[test]
    fn patchification_partitions_the_window() {
        let ds = toy_dataset(30, 2, 2);
        let windows = make_pretrain_windows(&ds, 0..30, 3, 5, 1).unwrap();
        for w in &windows {
            let mut flat = Vec::new();
            for j in 0..w.num_patches {
                flat.extend_from_slice(w.patch(j));
            }
            let mut expect = Vec::new();
            for step in 0..15 {
                for ch in 0..2 {
                    expect.push(ds.at(w.start + step, w.node, ch));
                }
            }
            assert_eq!(flat, expect);
        }
    }

    #[test]
    fn window_count_matches_formula_and_enumeration() {
        // range length 24, L=12, P=2, stride 1 -> exactly 1 window per node.
        let ds = toy_dataset(24, 3, 1);
        let windows = make_pretrain_windows(&ds, 0..24, 2, 12, 1).unwrap();
        assert_eq!(windows.len(), 3);

        // Random small config vs brute-force enumeration.
        let ds = toy_dataset(57, 2, 1);
        for stride in 1..5 {
            let got = make_pretrain_windows(&ds, 3..57, 4, 5, stride).unwrap();
            let mut brute = 0;
            for start in 3..57 {
                if start + 20 <= 57 && (start - 3) % stride == 0 {
                    brute += 2;
                }
            }
            assert_eq!(got.len(), brute, "stride {stride}");
            let per_node = (54 - 20) / stride + 1;
            assert_eq!(got.len(), 2 * per_node);
        }
    }

    #[test]
    fn window_longer_than_range_errors() {
        let ds = toy_dataset(24, 1, 1);
        assert!(matches!(
            make_pretrain_windows(&ds, 0..24, 3, 12, 1),
            Err(Error::WindowTooLong { .. })
        ));
    }

    #[test]
    fn forecast_sample_alignment() {
        let ds = toy_dataset(40, 2, 1);
        // range length = P*L + T_f -> exactly one sample.
        let samples = make_forecast_samples(&ds, 0..16, 2, 6, 4).unwrap();
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!(s.target_start(2, 6), 12);
        // Target starts right after the window.
        assert_eq!(s.target[0], ds.at(12, 0, 0));
        // History is the final patch: steps 6..12.
        assert_eq!(s.history[0], ds.at(6, 0, 0));

        // Count matches enumeration on a random config.
        let samples = make_forecast_samples(&ds, 0..40, 3, 4, 2).unwrap();
        assert_eq!(samples.len(), 40 - 12 - 2 + 1);
    }

    #[test]
    fn crossing_samples_keep_targets_in_range() {
        let ds = toy_dataset(40, 1, 1);
        let samples = make_forecast_samples_crossing(&ds, 30..40, 2, 12, 4).unwrap();
        assert_eq!(samples.len(), 7); // target starts 30..=36
        for s in &samples {
            let ts = s.target_start(2, 12);
            assert!(ts >= 30 && ts + 4 <= 40);
        }
    }

    #[test]
    fn trailing_windows_end_in_range() {
        let ds = toy_dataset(50, 1, 1);
        let windows = make_trailing_windows(&ds, 40..50, 2, 12, 5).unwrap();
        assert!(!windows.is_empty());
        for w in &windows {
            let end = w.start + 24;
            assert!(end > 40 && end <= 50);
        }
    }

    #[test]
    fn mask_spec_partitions() {
        let m = MaskSpec::from_masked(vec![1, 3], 5);
        assert_eq!(m.unmasked, vec![0, 2, 4]);
        assert!(m.is_masked(3));
        assert!(!m.is_masked(2));
    }
}
