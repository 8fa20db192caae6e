//! Scalar root finding on bracketed monotone functions.

use crate::error::{Error, Result};

/// Bisection for a sign change of `f` on `[lo, hi]`.
///
/// Stops when the bracket is narrower than `xtol` (absolute) or after
/// `max_iter` halvings, returning the midpoint.
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, xtol: f64, max_iter: usize) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::InvalidParameter(format!(
            "bisection bracket [{lo}, {hi}] does not change sign"
        )));
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= xtol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Newton's method kept inside a shrinking bracket; falls back to bisection
/// whenever a step leaves the bracket or fails to halve the residual.
///
/// `fdf` returns the value and derivative. The bracket must contain a sign
/// change.
pub fn safeguarded_newton(
    mut fdf: impl FnMut(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    x0: f64,
    xtol: f64,
    max_iter: usize,
    what: &'static str,
) -> Result<f64> {
    let (flo, _) = fdf(lo);
    let (fhi, _) = fdf(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::InvalidParameter(format!(
            "{what}: bracket [{lo}, {hi}] does not change sign"
        )));
    }
    let lo_sign = flo.signum();
    let mut x = if x0 > lo && x0 < hi { x0 } else { 0.5 * (lo + hi) };
    let mut last_step = hi - lo;
    for _ in 0..max_iter {
        let (fx, dfx) = fdf(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == lo_sign {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let step_ok = dfx != 0.0
            && newton.is_finite()
            && newton > lo
            && newton < hi
            && (newton - x).abs() < 0.5 * last_step;
        let next = if step_ok { newton } else { 0.5 * (lo + hi) };
        last_step = (next - x).abs();
        x = next;
        if last_step <= xtol * (1.0 + x.abs()) || hi - lo <= xtol * (1.0 + x.abs()) {
            return Ok(x);
        }
    }
    Err(Error::ConvergenceFailure {
        what,
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-15, 200).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn bisect_rejects_bad_bracket() {
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 100).is_err());
    }

    #[test]
    fn newton_converges_on_exponential() {
        let r = safeguarded_newton(|u| ((-2.0 * u).exp() - 0.3, -2.0 * (-2.0 * u).exp()), -5.0, 5.0, 4.9, 1e-15, 200, "test")
            .unwrap();
        assert!((r + 0.3f64.ln() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn newton_survives_flat_derivative() {
        // cube root has a vanishing derivative at the root
        let r = safeguarded_newton(|x| (x.powi(3), 3.0 * x * x), -1.0, 2.0, 0.0, 1e-14, 500, "cube").unwrap();
        assert!(r.abs() < 1e-4);
    }
}
