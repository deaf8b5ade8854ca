//! Gated fusion of the bucket and proxy predictions, its MAPE-form loss, the
//! weighted total objective and the tracked-conversion floor.

use crate::nn::sigmoid;

/// Gate weight on the bucket prediction.
pub fn gate(raw: f64) -> f64 {
    sigmoid(raw)
}

/// `lambda * y_f + (1 - lambda) * y_g`.
pub fn combine(lambda: f64, y_f: f64, y_g: f64) -> f64 {
    lambda * y_f + (1.0 - lambda) * y_g
}

/// `|lambda y_f/(y+eps) + (1-lambda) y_g/(y+eps) - y/(y+eps)|`.
///
/// With `eps_y = 0` and `y > 0` this is the plain relative error of the fused
/// prediction; `eps_y > 0` keeps zero-label samples defined.
pub fn fusion_loss(lambda: f64, y_f: f64, y_g: f64, y: f64, eps_y: f64) -> f64 {
    fusion_residual(lambda, y_f, y_g, y, eps_y).abs()
}

pub(crate) fn fusion_residual(lambda: f64, y_f: f64, y_g: f64, y: f64, eps_y: f64) -> f64 {
    let denom = y + eps_y;
    lambda * y_f / denom + (1.0 - lambda) * y_g / denom - y / denom
}

/// Partial derivatives of [`fusion_loss`] with respect to
/// `(lambda, y_f, y_g)`.
pub fn fusion_loss_gradient(lambda: f64, y_f: f64, y_g: f64, y: f64, eps_y: f64) -> [f64; 3] {
    let r = fusion_residual(lambda, y_f, y_g, y, eps_y);
    if r == 0.0 {
        return [0.0; 3];
    }
    let s = r.signum() / (y + eps_y);
    [s * (y_f - y_g), s * lambda, s * (1.0 - lambda)]
}

pub fn total_loss(bucket: f64, proxy: f64, fusion: f64, alpha: f64, beta: f64) -> f64 {
    bucket + alpha * proxy + beta * fusion
}

/// Final prediction never falls below the conversions already tracked.
pub fn clamp_prediction(y_hat: f64, tracked: u64) -> f64 {
    y_hat.max(tracked as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gate_examples() {
        assert_eq!(gate(0.0), 0.5);
        assert!(gate(20.0) > 1.0 - 1e-8);
        assert!((gate(-1.3863) - 0.2).abs() < 1e-5);
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine(1.0, 3.0, 9.0), 3.0);
        assert_eq!(combine(0.0, 3.0, 9.0), 9.0);
        assert_eq!(combine(0.25, 4.0, 8.0), 7.0);
    }

    #[test]
    fn fusion_loss_examples() {
        assert_eq!(fusion_loss(0.5, 10.0, 10.0, 10.0, 0.0), 0.0);
        assert!((fusion_loss(1.0, 12.0, 0.0, 10.0, 0.0) - 0.2).abs() < 1e-15);
        assert_eq!(fusion_loss(0.5, 3.0, 3.0, 0.0, 1.0), 3.0);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.7, 5.0, 9.0, 0.0, 0.0), 0.7);
        assert_eq!(total_loss(1.0, 2.0, 3.0, 1.0, 1.0), 6.0);
        assert!((total_loss(0.5, 0.2, 0.1, 2.0, 10.0) - 1.9).abs() < 1e-15);
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_prediction(5.0, 9), 9.0);
        assert_eq!(clamp_prediction(5.0, 2), 5.0);
        assert_eq!(clamp_prediction(0.0, 0), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let args = [0.3, 4.0, 11.0, 7.0, 1.0];
        let g = fusion_loss_gradient(args[0], args[1], args[2], args[3], args[4]);
        for k in 0..3 {
            let h = 1e-7;
            let mut plus = args;
            plus[k] += h;
            let mut minus = args;
            minus[k] -= h;
            let f = |a: [f64; 5]| fusion_loss(a[0], a[1], a[2], a[3], a[4]);
            let numeric = (f(plus) - f(minus)) / (2.0 * h);
            assert!((numeric - g[k]).abs() < 1e-7, "{k}: {numeric} vs {}", g[k]);
        }
    }

    proptest! {
        #[test]
        fn fused_prediction_is_bracketed(lambda in 0.0f64..=1.0, a in 0.0f64..1e4, b in 0.0f64..1e4) {
            let y = combine(lambda, a, b);
            let tol = 1e-9 * a.max(b).max(1.0);
            prop_assert!(y >= a.min(b) - tol && y <= a.max(b) + tol);
        }

        #[test]
        fn clamp_respects_tracked(y in 0.0f64..1e4, tracked in 0u64..10_000) {
            let f = clamp_prediction(y, tracked);
            prop_assert!(f >= tracked as f64);
            if y >= tracked as f64 { prop_assert_eq!(f, y); }
        }
    }
}
