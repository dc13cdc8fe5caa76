//! Finite-difference gradient oracle.
//!
//! Used by the test suites to check analytic gradients against central
//! differences. The oracle only re-evaluates the forward function; it never
//! touches backward rules, so it stays independent of the path it verifies.

/// Central-difference step used throughout the gradient checks.
pub const FD_STEP: f64 = 1e-4;

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_diff_grad(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let hi = f(&probe);
        probe[i] = orig - step;
        let lo = f(&probe);
        probe[i] = orig;
        grad[i] = (hi - lo) / (2.0 * step);
    }
    grad
}

/// Normwise relative error between two gradients:
/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, tiny)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}
