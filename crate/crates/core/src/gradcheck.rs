//! Central finite-difference gradient verification.
//!
//! The analytic gradients from [`crate::graph`] are checked against
//! `(f(x+h) − f(x−h)) / 2h` evaluated in f64. The differencing here never
//! touches the backward pass, so it stays an independent oracle for it.

/// Default step size for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative-error floor: gradients below this magnitude are compared
/// absolutely to avoid dividing by ~0.
pub const REL_FLOOR: f64 = 1e-6;

/// Numerical gradient of `f` at `point` by central differences.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut perturbed = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        perturbed[i] = point[i] + h;
        let plus = f(&perturbed);
        perturbed[i] = point[i] - h;
        let minus = f(&perturbed);
        perturbed[i] = point[i];
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}
