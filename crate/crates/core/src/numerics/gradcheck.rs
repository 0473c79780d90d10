//! Finite-difference gradient verification harness.

use crate::error::{Error, Result};

/// Compare an analytic gradient against central finite differences.
///
/// `loss` evaluates the scalar loss at a given parameter vector; it must be
/// deterministic. `params` is the point being checked and `analytic` the
/// gradient under test, in the same flattened order. Returns the worst
/// per-parameter error `|a - n| / (|n| + floor)`: relative to the numeric
/// gradient, with a floor `max(1e-4, 1e-6 |L|)` that absorbs difference
/// noise on near-zero gradients. The floor scales with the loss magnitude
/// because the achievable difference resolution does: the rounding of `L`
/// itself contributes about `ulp(L) / (2 eps)` of absolute noise to every
/// numeric gradient.
pub fn grad_check(
    loss: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<f64> {
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(params.len(), analytic.len());
    let base = loss(params);
    if !base.is_finite() {
        return Err(Error::NonFiniteLoss(base));
    }
    let floor = (1e-6 * base.abs()).max(1e-4);
    let mut point = params.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let lp = loss(&point);
        point[i] = orig - eps;
        let lm = loss(&point);
        point[i] = orig;
        if !lp.is_finite() || !lm.is_finite() {
            return Err(Error::NonFiniteLoss(if lp.is_finite() { lm } else { lp }));
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / (numeric.abs() + floor);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_fp_noise() {
        // loss = p^2 at p = 3, analytic gradient 6
        let mut loss = |p: &[f64]| p[0] * p[0];
        let err = grad_check(&mut loss, &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut loss = |p: &[f64]| p[0] * p[0];
        // gradient deliberately doubled
        let err = grad_check(&mut loss, &[3.0], &[12.0], 1e-5).unwrap();
        assert!((err - 1.0).abs() < 1e-4, "err = {err}");
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut loss = |p: &[f64]| p[0].ln();
        let err = grad_check(&mut loss, &[-1.0], &[0.0], 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss(_)));
    }

    #[test]
    fn multi_parameter_check() {
        // loss = p0^2 + 3 p1, gradient (2 p0, 3)
        let mut loss = |p: &[f64]| p[0] * p[0] + 3.0 * p[1];
        let err = grad_check(&mut loss, &[1.5, -2.0], &[3.0, 3.0], 1e-5).unwrap();
        assert!(err < 1e-8);
    }
}
