//! MAE, RMSE, MAPE over de-normalized values, with horizon slicing.
//!
//! All three take an inclusion mask; entries excluded there (missing data,
//! and for MAPE near-zero ground truth) contribute nothing. MAPE is a
//! fraction internally; callers render percent.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Ground-truth magnitudes below this are excluded from MAPE.
pub const MAPE_EXCLUSION: f64 = 1e-6;

pub fn mae(pred: &[f64], truth: &[f64], include: &[bool]) -> Result<f64> {
    check_lengths(pred, truth, include)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if include[i] {
            total += (pred[i] - truth[i]).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInclusion);
    }
    Ok(total / count as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64], include: &[bool]) -> Result<f64> {
    check_lengths(pred, truth, include)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if include[i] {
            let d = pred[i] - truth[i];
            total += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInclusion);
    }
    Ok((total / count as f64).sqrt())
}

/// Mean |pred - truth| / |truth| over included entries with |truth| above
/// the exclusion threshold.
pub fn mape(pred: &[f64], truth: &[f64], include: &[bool]) -> Result<f64> {
    check_lengths(pred, truth, include)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if include[i] && truth[i].abs() >= MAPE_EXCLUSION {
            total += (pred[i] - truth[i]).abs() / truth[i].abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInclusion);
    }
    Ok(total / count as f64)
}

fn check_lengths(pred: &[f64], truth: &[f64], include: &[bool]) -> Result<()> {
    if pred.len() != truth.len() || pred.len() != include.len() {
        return Err(Error::InvalidConfig(format!(
            "metric inputs disagree in length: pred {}, truth {}, mask {}",
            pred.len(),
            truth.len(),
            include.len()
        )));
    }
    Ok(())
}

/// One row of a metric report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonMetrics {
    /// 1-based horizon, or 0 for the mean over all horizons.
    pub horizon: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Fraction, not percent.
    pub mape: f64,
    pub count: usize,
    pub mape_excluded: usize,
}

/// Metrics at horizons 3, 6, 12 plus the mean over all horizons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<HorizonMetrics>,
}

impl MetricReport {
    /// Build from stacked per-sample predictions shaped (samples, T_f, N, C),
    /// flattened row-major. `include` marks valid entries.
    pub fn from_predictions(
        pred: &[f64],
        truth: &[f64],
        include: &[bool],
        horizon_len: usize,
        per_step: usize,
        report_horizons: &[usize],
    ) -> Result<MetricReport> {
        check_lengths(pred, truth, include)?;
        let block = horizon_len * per_step;
        if block == 0 || pred.len() % block != 0 {
            return Err(Error::InvalidConfig(format!(
                "prediction length {} is not a multiple of T_f * N * C = {block}",
                pred.len()
            )));
        }
        let samples = pred.len() / block;
        let mut rows = Vec::new();
        for &h in report_horizons {
            if h == 0 || h > horizon_len {
                return Err(Error::InvalidConfig(format!(
                    "report horizon {h} outside 1..={horizon_len}"
                )));
            }
            rows.push(slice_metrics(
                pred, truth, include, samples, horizon_len, per_step, h - 1..h, h,
            )?);
        }
        rows.push(slice_metrics(
            pred,
            truth,
            include,
            samples,
            horizon_len,
            per_step,
            0..horizon_len,
            0,
        )?);
        Ok(MetricReport { rows })
    }

    pub fn row(&self, horizon: usize) -> Option<&HorizonMetrics> {
        self.rows.iter().find(|r| r.horizon == horizon)
    }

    /// CSV with header `horizon,mae,rmse,mape`; the mean row is labeled
    /// `mean` and MAPE is rendered as percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon,mae,rmse,mape\n");
        for r in &self.rows {
            let label = if r.horizon == 0 {
                "mean".to_string()
            } else {
                r.horizon.to_string()
            };
            out.push_str(&format!(
                "{label},{:.6},{:.6},{:.4}%\n",
                r.mae,
                r.rmse,
                r.mape * 100.0
            ));
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn slice_metrics(
    pred: &[f64],
    truth: &[f64],
    include: &[bool],
    samples: usize,
    horizon_len: usize,
    per_step: usize,
    steps: std::ops::Range<usize>,
    label: usize,
) -> Result<HorizonMetrics> {
    let mut p = Vec::new();
    let mut t = Vec::new();
    let mut m = Vec::new();
    for s in 0..samples {
        for h in steps.clone() {
            let base = (s * horizon_len + h) * per_step;
            p.extend_from_slice(&pred[base..base + per_step]);
            t.extend_from_slice(&truth[base..base + per_step]);
            m.extend_from_slice(&include[base..base + per_step]);
        }
    }
    let count = m.iter().filter(|&&x| x).count();
    let mape_excluded = p
        .iter()
        .zip(&t)
        .zip(&m)
        .filter(|((_, t), &inc)| inc && t.abs() < MAPE_EXCLUSION)
        .count();
    Ok(HorizonMetrics {
        horizon: label,
        mae: mae(&p, &t, &m)?,
        rmse: rmse(&p, &t, &m)?,
        mape: mape(&p, &t, &m)?,
        count,
        mape_excluded,
    })
}
