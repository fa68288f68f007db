//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward pass, so it stays
//! independent of the backward rules it is used to verify.

/// Central-difference gradient with respect to `n` scalar entries.
///
/// `eval(i, delta)` must add `delta` to entry `i`, evaluate the scalar loss,
/// and restore the entry before returning.
pub fn fd_grad(n: usize, h: f64, mut eval: impl FnMut(usize, f64) -> f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let plus = eval(i, h);
            let minus = eval(i, -h);
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Worst relative disagreement between analytic and numeric gradients.
///
/// Entries where both magnitudes fall below `floor` are compared absolutely
/// against `floor` instead, so finite-difference noise on near-zero
/// gradients does not dominate the report.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradcheck: length mismatch {} vs {}",
        analytic.len(),
        numeric.len()
    );
    let mut worst: f64 = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        let err = if scale < floor {
            (a - n).abs() / floor
        } else {
            (a - n).abs() / scale
        };
        worst = worst.max(err);
    }
    worst
}

/// Default step size for 64-bit central differences.
pub const FD_STEP: f64 = 1e-5;
/// Magnitude floor below which gradients are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;
