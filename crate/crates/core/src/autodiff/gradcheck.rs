//! Central finite-difference gradients for verifying the tape.

/// Central differences of `f` at `point` with step `h`.
pub fn central_diff<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let fp = f(&x);
        x[i] = point[i] - h;
        let fm = f(&x);
        x[i] = point[i];
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Relative error between an analytic and a numeric derivative.
///
/// The denominator is floored at `floor` so that entries whose true
/// derivative is (near) zero are compared on an absolute scale.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest [`rel_error`] over two gradient vectors.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n, floor))
        .fold(0.0, f64::max)
}
