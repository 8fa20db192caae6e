//! Standard normal quantiles and Gaussian tail integrals.
//!
//! Tail quantities are expressed through `I(z) = ∫_z^∞ e^{-t²/2} dt`
//! (not through the normal CDF); `Φ̄(z) = I(z) / √(2π)`. Logarithms of `I`
//! stay finite far beyond the point where `erfc` underflows.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const SQRT_HALF_PI: f64 = 1.253_314_137_315_500_3;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Switch from `erfc` to the Mills-ratio continued fraction.
const CF_THRESHOLD: f64 = 8.0;

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Mills ratio `I(z) e^{z²/2}` for large positive `z` by a Lentz evaluation
/// of `1/(z + 1/(z + 2/(z + 3/(z + ...))))`.
fn mills_ratio_cf(z: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = z;
    let mut c = z;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = z + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = z + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// `ln ∫_z^∞ e^{-t²/2} dt`, accurate for any finite `z`.
pub fn log_tail_integral(z: f64) -> f64 {
    if z < CF_THRESHOLD {
        (SQRT_HALF_PI * libm::erfc(z * FRAC_1_SQRT_2)).ln()
    } else {
        mills_ratio_cf(z).ln() - 0.5 * z * z
    }
}

/// `∫_z^∞ e^{-t²/2} dt`.
pub fn tail_integral(z: f64) -> f64 {
    if z < CF_THRESHOLD {
        SQRT_HALF_PI * libm::erfc(z * FRAC_1_SQRT_2)
    } else {
        mills_ratio_cf(z) * (-0.5 * z * z).exp()
    }
}

/// `e^{-z²/2} / ∫_z^∞ e^{-t²/2} dt`, the Gaussian hazard rate.
pub fn hazard(z: f64) -> f64 {
    if z < CF_THRESHOLD {
        (-0.5 * z * z - log_tail_integral(z)).exp()
    } else {
        1.0 / mills_ratio_cf(z)
    }
}

/// Rational approximation of the normal quantile (Acklam), relative error
/// around 1e-9 before refinement.
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -acklam(1.0 - p)
    }
}

/// The α-quantile of the standard normal law for `0 < α < 1/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantile {
    pub alpha: f64,
    pub z_alpha: f64,
    pub abs_z: f64,
    log_tail_abs_z: f64,
}

impl Quantile {
    /// `F_α(z) = I(z) / I(|z_α|)` for `z >= 0`.
    pub fn tail_ratio(&self, z: f64) -> Result<f64> {
        Ok(self.log_tail_ratio(z)?.exp())
    }

    /// `ln F_α(z)`, computed as a difference of log tail integrals.
    pub fn log_tail_ratio(&self, z: f64) -> Result<f64> {
        if z < 0.0 || z.is_nan() {
            return Err(Error::NegativeArgument(z));
        }
        Ok(self.log_tail_ratio_unchecked(z))
    }

    pub(crate) fn log_tail_ratio_unchecked(&self, z: f64) -> f64 {
        log_tail_integral(z) - self.log_tail_abs_z
    }
}

pub fn normal_quantile(alpha: f64) -> Result<Quantile> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let mut z = acklam(alpha);
    // Newton on Φ(z) - α; the rational start is within 1e-9.
    for _ in 0..2 {
        let err = normal_cdf(z) - alpha;
        z -= err / normal_pdf(z);
    }
    let z = z.min(-f64::MIN_POSITIVE);
    Ok(Quantile {
        alpha,
        z_alpha: z,
        abs_z: -z,
        log_tail_abs_z: log_tail_integral(-z),
    })
}

/// Lower and upper bounds of `x ∫_x^∞ e^{-t²/2} dt`:
/// `(1 - x⁻²) e^{-x²/2}` and `e^{-x²/2}`. The lower bound is vacuous
/// (non-positive) for `x <= 1`.
pub fn mills_bounds(x: f64) -> (f64, f64) {
    let e = (-0.5 * x * x).exp();
    ((1.0 - 1.0 / (x * x)) * e, e)
}

/// `√(2π)`, exposed for conversions between `I(z)` and `Φ̄(z)`.
pub fn sqrt_two_pi() -> f64 {
    (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    // High-precision reference values (40-digit arithmetic).
    const Z_005: f64 = -1.644_853_626_951_472_7;
    const Z_001: f64 = -2.326_347_874_040_841;

    #[test]
    fn quantile_reference_values() {
        let q = normal_quantile(0.05).unwrap();
        assert!((q.z_alpha - Z_005).abs() < 1e-13);
        let q = normal_quantile(0.01).unwrap();
        assert!((q.z_alpha - Z_001).abs() < 1e-13);
        assert!((q.abs_z - 2.326_347_874_040_841).abs() < 1e-13);
    }

    #[test]
    fn quantile_near_median() {
        let q = normal_quantile(0.5 - 1e-12).unwrap();
        assert!(q.z_alpha < 0.0 && q.z_alpha > -1e-10);
    }

    #[test]
    fn quantile_rejects_out_of_range() {
        for a in [0.0, 0.5, 0.7, -0.1, f64::NAN] {
            assert!(matches!(normal_quantile(a), Err(Error::AlphaOutOfRange(_))));
        }
    }

    #[test]
    fn quantile_round_trip() {
        for i in 1..2000 {
            let a = i as f64 * 0.5 / 2000.0;
            let q = normal_quantile(a).unwrap();
            assert!((normal_cdf(q.z_alpha) - a).abs() <= 1e-12, "alpha {a}");
        }
        for a in [1e-10, 1e-6, 1e-4] {
            let q = normal_quantile(a).unwrap();
            assert!((normal_cdf(q.z_alpha) - a).abs() <= 1e-12 * a.max(1e-3));
        }
    }

    #[test]
    fn tail_ratio_examples() {
        let q = normal_quantile(0.01).unwrap();
        assert_eq!(q.tail_ratio(q.abs_z).unwrap(), 1.0);
        let f = q.tail_ratio(q.abs_z + 1.0).unwrap();
        assert!((f - 0.043_996_018_047_378_59).abs() < 1e-13);
        assert!(q.tail_ratio(60.0).unwrap() < 1e-300);
        assert!(q.log_tail_ratio(200.0).unwrap().is_finite());
        assert!(matches!(q.tail_ratio(-0.1), Err(Error::NegativeArgument(_))));
    }

    #[test]
    fn log_tail_is_continuous_across_the_switch() {
        let lo = log_tail_integral(CF_THRESHOLD - 1e-9);
        let hi = log_tail_integral(CF_THRESHOLD);
        assert!((lo - hi).abs() < 1e-8);
        // relative agreement of both branches at the switch point
        let erfc_branch = (SQRT_HALF_PI * libm::erfc(CF_THRESHOLD * FRAC_1_SQRT_2)).ln();
        let cf_branch = mills_ratio_cf(CF_THRESHOLD).ln() - 0.5 * CF_THRESHOLD * CF_THRESHOLD;
        assert!((erfc_branch - cf_branch).abs() < 1e-12);
    }

    #[test]
    fn tail_ratio_decreasing_on_grids() {
        for a in [0.001, 0.01, 0.05, 0.25] {
            let q = normal_quantile(a).unwrap();
            let mut prev = f64::INFINITY;
            for i in 0..1000 {
                let z = q.abs_z + i as f64 * 0.035;
                let f = q.log_tail_ratio(z).unwrap();
                assert!(f < prev);
                assert!(f <= 0.0);
                prev = f;
            }
        }
    }

    #[test]
    fn mills_sandwich_on_log_grid() {
        let n = 400;
        for i in 0..=n {
            let x = 1.01 * (40.0f64 / 1.01).powf(i as f64 / n as f64);
            let (lo, hi) = mills_bounds(x);
            // compare in log space to stay meaningful in the far tail
            let mid = x.ln() + log_tail_integral(x);
            assert!(lo.ln() < mid || lo <= 0.0, "lower fails at {x}");
            if x < 38.0 {
                assert!(mid < hi.ln(), "upper fails at {x}");
            } else {
                assert!(mid < -0.5 * x * x);
            }
        }
        let (lo, _) = mills_bounds(1.0);
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn mills_examples() {
        let (lo, hi) = mills_bounds(2.0);
        assert!((lo - 0.75 * (-2.0f64).exp()).abs() < 1e-16);
        assert!((hi - (-2.0f64).exp()).abs() < 1e-16);
        let mid = 2.0 * tail_integral(2.0);
        assert!(lo < mid && mid < hi);
        let (lo, hi) = mills_bounds(10.0);
        let mid = 10.0 * sqrt_two_pi() * normal_cdf(-10.0);
        let mid_direct = 10.0 * tail_integral(10.0);
        assert!((mid - mid_direct).abs() < 1e-6 * mid_direct);
        assert!(lo < mid_direct && mid_direct < hi);
    }

    #[test]
    fn hazard_matches_definition() {
        for z in [0.0, 1.0, 2.5, 7.9, 8.1, 20.0] {
            let h = hazard(z);
            let direct = (-0.5 * z * z).exp() / tail_integral(z);
            assert!((h - direct).abs() < 1e-10 * direct, "z={z}");
        }
    }
}
