//! Principal branch of the Lambert W function on `[0, inf)`.

use crate::error::{Error, Result};

const MAX_ITER: usize = 50;
const TOL: f64 = 1e-14;

/// `w >= 0` with `w e^w = x`.
///
/// Newton from `log(1 + x)`. Below `x = 3` the iteration runs on
/// `w e^w - x`; above it on `w + log w - log x`, which cannot overflow.
pub fn lambert_w(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambert_w needs x >= 0, got {x}"
        )));
    }
    if x == 0.0 || x == f64::INFINITY {
        return Ok(x);
    }
    let mut w = x.ln_1p();
    if x < 3.0 {
        for _ in 0..MAX_ITER {
            let e = w.exp();
            let step = (w * e - x) / (e * (w + 1.0));
            w -= step;
            if step.abs() <= TOL * w.max(f64::MIN_POSITIVE) {
                break;
            }
        }
    } else {
        let lx = x.ln();
        for _ in 0..MAX_ITER {
            let next = w * (1.0 + lx - w.ln()) / (1.0 + w);
            let step = (next - w).abs();
            w = next;
            if step <= TOL * w {
                break;
            }
        }
    }
    Ok(w)
}

/// `log W(exp(y))`, usable when `exp(y)` over- or underflows.
///
/// Halley's method on `e^t + t = y`, which stays in range for every finite `y`.
pub fn log_lambert_w_exp(y: f64) -> f64 {
    if y == f64::NEG_INFINITY || y.is_nan() {
        return y;
    }
    if y < -20.0 {
        // W(x) = x - x^2 + O(x^3) and log W = y - W
        let x = y.exp();
        return y - x * (1.0 - x);
    }
    let t = if y < 1.0 {
        y.exp().ln_1p().ln()
    } else {
        (y - y.ln()).ln()
    };
    halley(y, t)
}

/// [`log_lambert_w_exp`] started from a nearby guess, typically the value
/// for a slightly different `y`.
pub(crate) fn log_lambert_w_exp_near(y: f64, guess: f64) -> f64 {
    if y < -20.0 || !guess.is_finite() || (guess.exp() + guess - y).abs() > 1.0 {
        return log_lambert_w_exp(y);
    }
    halley(y, guess)
}

fn halley(y: f64, mut t: f64) -> f64 {
    for _ in 0..MAX_ITER {
        let e = t.exp();
        let f = e + t - y;
        let fp = e + 1.0;
        let step = f / fp / (1.0 - 0.5 * f * e / (fp * fp));
        t -= step;
        // cubic convergence: the error after a step of 1e-5 is far below 1e-15
        if step.abs() <= 1e-5 * t.abs().max(1.0) {
            break;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn known_values() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert_relative_eq!(
            lambert_w(std::f64::consts::E).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert!((lambert_w(2.0).unwrap() - 0.8526055020).abs() < 1e-10);
        assert!(lambert_w(-1e-3).is_err());
        assert!(lambert_w(f64::NAN).is_err());
    }

    #[test]
    fn tiny_and_huge_arguments() {
        let w = lambert_w(1e-300).unwrap();
        assert_relative_eq!(w, 1e-300, max_relative = 1e-15);
        let w = lambert_w(1e300).unwrap();
        assert_relative_eq!(w + w.ln(), 1e300f64.ln(), max_relative = 1e-15);
        let w = lambert_w(f64::MAX).unwrap();
        assert!(w.is_finite());
    }

    #[test]
    fn log_variant_matches_direct_evaluation() {
        for k in 0..=730 {
            let y = -30.0 + k as f64;
            let direct = lambert_w(f64::exp(y)).unwrap().ln();
            assert_relative_eq!(
                log_lambert_w_exp(y),
                direct,
                max_relative = 1e-14,
                epsilon = 1e-14
            );
        }
        for y in [-19.5, -3.0, 0.5, 40.0, 650.0] {
            for d in [-0.3, 0.0, 1e-9, 0.2] {
                let guess = log_lambert_w_exp(y + d);
                assert_relative_eq!(
                    log_lambert_w_exp_near(y, guess),
                    log_lambert_w_exp(y),
                    max_relative = 1e-15
                );
            }
        }
        for y in [701.0, 1e4, 1e8] {
            let t = log_lambert_w_exp(y);
            assert_relative_eq!(t.exp() + t, y, max_relative = 1e-14);
        }
    }
}
