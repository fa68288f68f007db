//! Introspection artifacts: patch-representation similarity, top-k similar
//! patch retrieval, positional-embedding similarity, and reconstruction
//! overlays, emitted as CSV matrices and self-contained SVG plots.

use crate::data::PatchWindow;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Ctx;
use crate::tsformer::{sample_mask, MaskSpec, RepresentationBank, TSFormer};

/// What a similarity matrix was computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilaritySubject {
    Representations,
    PositionalEmbeddings,
}

/// Pairwise cosine similarities between P vectors.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub subject: SimilaritySubject,
    pub n: usize,
    pub values: Vec<f64>,
    /// Set when the subject is representations.
    pub node: Option<usize>,
    pub window_start: Option<usize>,
}

impl SimilarityMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Mean similarity over all ordered pairs exactly `lag` apart.
    pub fn mean_at_lag(&self, lag: usize) -> f64 {
        assert!(lag >= 1 && lag < self.n, "lag {lag} out of range");
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..self.n - lag {
            total += self.at(i, i + lag);
            count += 1;
        }
        total / count as f64
    }

    /// Header-less CSV: P rows of P comma-separated decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|j| format!("{:.9}", self.at(i, j)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Cosine matrix over `n` rows of width `f`. Zero-norm rows are an error
/// naming the row.
pub fn cosine_matrix(rows: &[f64], n: usize, f: usize) -> Result<Vec<f64>> {
    assert_eq!(rows.len(), n * f, "cosine_matrix: shape mismatch");
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let r = &rows[i * f..(i + 1) * f];
        norms[i] = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norms[i] == 0.0 {
            return Err(Error::ZeroNormRow { node: i });
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let a = &rows[i * f..(i + 1) * f];
            let b = &rows[j * f..(j + 1) * f];
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let s = dot / (norms[i] * norms[j]);
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    Ok(out)
}

/// Pairwise cosine similarity between the cached representations of one
/// node's window.
pub fn patch_similarity(
    bank: &RepresentationBank,
    node: usize,
    window_start: usize,
) -> Result<SimilarityMatrix> {
    let feature = bank.feature(node, window_start)?;
    let values = cosine_matrix(feature, bank.num_patches, bank.d)?;
    Ok(SimilarityMatrix {
        subject: SimilaritySubject::Representations,
        n: bank.num_patches,
        values,
        node: Some(node),
        window_start: Some(window_start),
    })
}

/// Pairwise cosine similarity between the learned positional embeddings.
pub fn posemb_similarity(model: &TSFormer) -> Result<SimilarityMatrix> {
    let p = model.cfg.num_patches;
    let d = model.cfg.d_model;
    let values = cosine_matrix(&model.pos_emb.value, p, d)?;
    Ok(SimilarityMatrix {
        subject: SimilaritySubject::PositionalEmbeddings,
        n: p,
        values,
        node: None,
        window_start: None,
    })
}

/// Indices of the k patches most similar to `patch`, excluding itself, ties
/// broken toward the lower index.
pub fn top_k_similar(matrix: &SimilarityMatrix, patch: usize, k: usize) -> Vec<usize> {
    assert!(patch < matrix.n, "top_k_similar: patch index out of range");
    assert!(k >= 1 && k <= matrix.n - 1, "top_k_similar: k out of range");
    let mut sims: Vec<(f64, usize)> = (0..matrix.n)
        .filter(|&j| j != patch)
        .map(|j| (matrix.at(patch, j), j))
        .collect();
    sims.sort_by(|(sa, ja), (sb, jb)| sb.partial_cmp(sa).unwrap().then_with(|| ja.cmp(jb)));
    sims.into_iter().take(k).map(|(_, j)| j).collect()
}

// ── reconstruction overlays ──────────────────────────────────────────

/// One time step of a reconstruction overlay.
#[derive(Debug, Clone)]
pub struct OverlayStep {
    pub t: usize,
    pub original: f64,
    pub masked: bool,
    /// Present only at masked steps.
    pub reconstruction: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionOverlay {
    pub node: usize,
    pub window_start: usize,
    pub steps: Vec<OverlayStep>,
    pub mask: MaskSpec,
}

/// Run one masked pass over a window (mask drawn from `mask_seed`) and
/// expand the result to per-step records.
pub fn reconstruction_dump(
    model: &TSFormer,
    window: &PatchWindow,
    mask_seed: u64,
) -> Result<ReconstructionOverlay> {
    let cfg = &model.cfg;
    let mut mask_rng = rng::split(mask_seed, "inspect/mask");
    let mask = sample_mask(&mut mask_rng, cfg.num_patches, cfg.mask_ratio)?;
    let mut cx = Ctx::new();
    let patches = cx.constant(
        window.patches.clone(),
        &[cfg.num_patches, cfg.patch_width()],
    );
    let (s_hat, _) = model.forward_masked(&mut cx, &patches, &mask);
    let recon = s_hat.to_vec();

    // First channel only for the overlay.
    let c = cfg.channels;
    let l = cfg.patch_len;
    let mut steps = Vec::with_capacity(cfg.num_patches * l);
    for j in 0..cfg.num_patches {
        let masked = mask.is_masked(j);
        for s in 0..l {
            let t = window.start + j * l + s;
            let original = window.patch(j)[s * c];
            let reconstruction = if masked {
                Some(recon[j * l * c + s * c])
            } else {
                None
            };
            steps.push(OverlayStep {
                t,
                original,
                masked,
                reconstruction,
            });
        }
    }
    Ok(ReconstructionOverlay {
        node: window.node,
        window_start: window.start,
        steps,
        mask,
    })
}

impl ReconstructionOverlay {
    /// Mean absolute reconstruction error over masked steps (first channel).
    pub fn masked_mae(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in &self.steps {
            if let Some(r) = s.reconstruction {
                total += (r - s.original).abs();
                count += 1;
            }
        }
        total / count as f64
    }

    /// CSV columns: t, original, masked, reconstruction (empty if unmasked).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,original,masked,reconstruction\n");
        for s in &self.steps {
            let rec = s
                .reconstruction
                .map(|r| format!("{r:.9}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{:.9},{},{}\n",
                s.t,
                s.original,
                if s.masked { 1 } else { 0 },
                rec
            ));
        }
        out
    }

    /// Self-contained SVG: original series, shaded masked regions, and the
    /// reconstruction at masked steps.
    pub fn to_svg(&self) -> String {
        let w = 900.0;
        let h = 260.0;
        let pad = 30.0;
        let n = self.steps.len().max(2);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.steps {
            lo = lo.min(s.original);
            hi = hi.max(s.original);
            if let Some(r) = s.reconstruction {
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        if hi - lo < 1e-9 {
            hi = lo + 1.0;
        }
        let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64;
        let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);

        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
        );
        // Masked-region shading.
        let step_w = (w - 2.0 * pad) / (n - 1) as f64;
        for (i, s) in self.steps.iter().enumerate() {
            if s.masked {
                svg.push_str(&format!(
                    "<rect x=\"{:.2}\" y=\"{pad}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#dddddd\"/>\n",
                    x(i) - step_w / 2.0,
                    step_w,
                    h - 2.0 * pad
                ));
            }
        }
        let original: Vec<String> = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{:.2},{:.2}", x(i), y(s.original)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            original.join(" ")
        ));
        // Reconstruction segments over contiguous masked runs.
        let mut run: Vec<String> = Vec::new();
        for (i, s) in self.steps.iter().enumerate() {
            match s.reconstruction {
                Some(r) => run.push(format!("{:.2},{:.2}", x(i), y(r))),
                None => {
                    if run.len() > 1 {
                        svg.push_str(&format!(
                            "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                            run.join(" ")
                        ));
                    }
                    run.clear();
                }
            }
        }
        if run.len() > 1 {
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                run.join(" ")
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Fixed-ramp heat map of a similarity matrix (cosmetic; the CSV is the
/// tested artifact).
pub fn similarity_svg(matrix: &SimilarityMatrix) -> String {
    let n = matrix.n;
    let cell = (600.0 / n as f64).max(1.0);
    let size = cell * n as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size:.0}\" height=\"{size:.0}\" viewBox=\"0 0 {size} {size}\">\n"
    );
    for i in 0..n {
        for j in 0..n {
            // Map [-1, 1] to a blue->white->red ramp.
            let v = matrix.at(i, j).clamp(-1.0, 1.0);
            let (r, g, b) = if v >= 0.0 {
                (255, (255.0 * (1.0 - v)) as u8, (255.0 * (1.0 - v)) as u8)
            } else {
                ((255.0 * (1.0 + v)) as u8, (255.0 * (1.0 + v)) as u8, 255)
            };
            svg.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"rgb({r},{g},{b})\"/>\n",
                j as f64 * cell,
                i as f64 * cell
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
