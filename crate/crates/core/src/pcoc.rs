//! Proxy-label regression: learn the ranking model's PCOC (aggregated
//! pCTCVR over true conversions) and turn it back into a conversion count.

use crate::nn::{sigmoid, softplus};

pub const PCOC_MIN: f64 = 0.1;
pub const PCOC_MAX: f64 = 10.0;

/// `z / y` for `y > 0`, otherwise 1.
pub fn pcoc_label(z: f64, y: u64) -> f64 {
    if y > 0 {
        z / y as f64
    } else {
        1.0
    }
}

/// Predicted PCOC from the raw head output: softplus, then clamped into
/// `[PCOC_MIN, PCOC_MAX]`. Returns the value and its derivative with respect
/// to the raw output (zero where the clamp is active).
pub fn pcoc_from_raw(raw: f64) -> (f64, f64) {
    let s = softplus(raw);
    if s < PCOC_MIN {
        (PCOC_MIN, 0.0)
    } else if s > PCOC_MAX {
        (PCOC_MAX, 0.0)
    } else {
        (s, sigmoid(raw))
    }
}

/// Absolute error between predicted and label PCOC.
pub fn pcoc_loss(predicted: f64, label: f64) -> f64 {
    (predicted - label).abs()
}

pub fn pcoc_loss_batch(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(p, l)| pcoc_loss(p, l)).sum::<f64>() / pairs.len() as f64
}

/// `d|p - l| / dp`, taking 0 at the kink.
pub fn pcoc_loss_derivative(predicted: f64, label: f64) -> f64 {
    let d = predicted - label;
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `y_g = z / pcoc_hat`.
///
/// Among the floats within two ulps of the rounded quotient, returns the one
/// with the shortest mantissa whose division `z / c` reproduces `pcoc_hat`.
/// This keeps the result within rounding error of `z / pcoc_hat` while making
/// `infer_yg(z, pcoc_label(z, y)) == y` hold exactly for integer labels.
pub fn infer_yg(z: f64, pcoc_hat: f64) -> f64 {
    let quotient = z / pcoc_hat;
    if z == 0.0 || !quotient.is_finite() || quotient <= 0.0 {
        return quotient;
    }
    let bits = quotient.to_bits();
    let mut best = quotient;
    let mut best_zeros = 0;
    for offset in -2i64..=2 {
        let candidate = f64::from_bits((bits as i64 + offset) as u64);
        if z / candidate != pcoc_hat {
            continue;
        }
        let zeros = (candidate.to_bits() & ((1u64 << 52) - 1)).trailing_zeros();
        if zeros > best_zeros || (zeros == best_zeros && offset == 0) {
            best = candidate;
            best_zeros = zeros;
        }
    }
    best
}
