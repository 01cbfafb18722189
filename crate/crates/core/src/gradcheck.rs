//! Finite-difference helpers for verifying analytic gradients.

/// Denominator floor of [`max_rel_err`], so entries whose gradient is
/// numerically zero are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `max_i |a_i − n_i| / max(|a_i|, |n_i|, 1e-6)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR))
        .fold(0.0, f64::max)
}

/// Central difference `(f(x + h) − f(x − h)) / 2h` for every coordinate of `x`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
