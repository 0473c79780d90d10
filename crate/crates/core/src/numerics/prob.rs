//! Probability helpers shared by every loss in the pipeline.
//!
//! Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any
//! logarithm; the gradient through a clamped value is zero, so analytic
//! gradients stay consistent with the computed loss.

use super::Scalar;

/// Clamp bound applied to probabilities before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Clamp a probability into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::from_f64_const(PROB_CLAMP);
    let hi = T::one() - lo;
    p.max(lo).min(hi)
}

/// Binary cross entropy of a probability against a 0/1 label.
///
/// Returns `-(label ln p + (1 - label) ln(1 - p))` with `p` clamped.
pub fn bce<T: Scalar>(p: T, label: T) -> T {
    let p = clamp_prob(p);
    -(label * p.ln() + (T::one() - label) * (T::one() - p).ln())
}

/// d `bce(p, label)` / d `p` for the unclamped probability.
///
/// Zero where `p` sits outside the clamp range, matching the flat loss there.
pub fn bce_grad<T: Scalar>(p: T, label: T) -> T {
    let lo = T::from_f64_const(PROB_CLAMP);
    let hi = T::one() - lo;
    if p < lo || p > hi {
        return T::zero();
    }
    (p - label) / (p * (T::one() - p))
}
