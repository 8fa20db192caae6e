//! Optimal strategies under a uniform expected-shortfall bound
//! `ES_t ≤ ζ x e^{R_t}` for all `t ∈ [0, T]`.

use crate::error::{Error, Result};
use crate::gaussian::{hazard, normal_quantile, Quantile};
use crate::market::Market;
use crate::risk::RiskSpec;
use crate::roots;
use crate::solution::{Condition, Regime, Solution};
use crate::tight::TightRegime;
use crate::unconstrained::{check_wealth, solve_equal_gamma, tilde_norms, UtilityParams};
use crate::var::{rate_condition, require_es, theta_direction_solution};

/// `ψ(ρ, u) = ‖θ‖_T ρ u² + ln F_α(|z_α| + ρu)`: the ES log functional of
/// the exposure `ρ θ/‖θ‖_T` at the time where `‖θ‖_t = u ‖θ‖_T`.
#[derive(Debug, Clone, Copy)]
pub struct PsiFunction {
    pub theta_norm: f64,
    pub quantile: Quantile,
}

impl PsiFunction {
    pub fn new(theta_norm: f64, alpha: f64) -> Result<Self> {
        if !(theta_norm >= 0.0 && theta_norm.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta norm {theta_norm}")));
        }
        Ok(Self {
            theta_norm,
            quantile: normal_quantile(alpha)?,
        })
    }

    pub fn for_market(market: &Market, alpha: f64) -> Result<Self> {
        Self::new(market.theta_norm_total(), alpha)
    }

    pub fn abs_z(&self) -> f64 {
        self.quantile.abs_z
    }

    /// Whether `|z_α| ≥ 2‖θ‖_T`, under which `ψ` is monotone in both
    /// arguments.
    pub fn monotonicity_condition(&self) -> Condition {
        Condition::from_margin("es_tail_monotonicity", self.abs_z() - 2.0 * self.theta_norm)
    }

    pub fn psi(&self, rho: f64, u: f64) -> f64 {
        self.theta_norm * rho * u * u + self.quantile.log_tail_ratio_unchecked(self.abs_z() + rho * u)
    }

    /// `∂ψ/∂u = 2‖θ‖ρu - ρ h(|z| + ρu)` with `h` the Gaussian hazard rate.
    pub fn dpsi_du(&self, rho: f64, u: f64) -> f64 {
        rho * (2.0 * self.theta_norm * u - hazard(self.abs_z() + rho * u))
    }

    /// `∂ψ(ρ, 1)/∂ρ = ‖θ‖ - h(|z| + ρ)`.
    pub fn dpsi_drho(&self, rho: f64) -> f64 {
        self.theta_norm - hazard(self.abs_z() + rho)
    }

    /// `(-ln(1 - z⁻²) - ln(1-ζ)) / (|z| - ‖θ‖)`, an upper bound on the root
    /// when `|z| > 1`.
    pub fn root_bound(&self, zeta: f64) -> Option<f64> {
        let z = self.abs_z();
        if z <= 1.0 || z <= self.theta_norm {
            return None;
        }
        Some((-(-1.0 / (z * z)).ln_1p() - (-zeta).ln_1p()) / (z - self.theta_norm))
    }

    /// The unique `ρ > 0` with `ψ(ρ, 1) = ln(1-ζ)`.
    pub fn root(&self, zeta: f64) -> Result<f64> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(Error::InvalidParameter(format!("zeta={zeta} outside (0, 1)")));
        }
        let cond = self.monotonicity_condition();
        if !cond.satisfied {
            return Err(Error::HypothesisViolated {
                abs_z: self.abs_z(),
                theta_norm: self.theta_norm,
            });
        }
        let target = (-zeta).ln_1p();
        let f = |rho: f64| self.psi(rho, 1.0) - target;
        let mut hi = match self.root_bound(zeta) {
            Some(b) => (2.0 * b).max(1.0),
            None => 1.0,
        };
        let mut expansions = 0;
        while f(hi) > 0.0 {
            hi *= 2.0;
            expansions += 1;
            if expansions > 200 {
                return Err(Error::ConvergenceFailure {
                    what: "expected-shortfall root bracket",
                    iterations: expansions,
                });
            }
        }
        roots::bisect(f, 0.0, hi, 0.0, 400)
    }

    /// `(ρ, ψ(ρ, 1))` on the given abscissae.
    pub fn curve(&self, rhos: &[f64]) -> Vec<(f64, f64)> {
        rhos.iter().map(|&r| (r, self.psi(r, 1.0))).collect()
    }
}

pub fn rho_es(market: &Market, spec: &RiskSpec) -> Result<f64> {
    spec.validate()?;
    PsiFunction::for_market(market, spec.alpha)?.root(spec.zeta)
}

/// `1 - (1 - κ̃(γ)) e^{q‖θ‖²_T} F_α(|z_α| + q‖θ‖_T)`.
pub fn es_loose_threshold(market: &Market, gamma: f64, quantile: &Quantile) -> f64 {
    let q = 1.0 / (1.0 - gamma);
    let th = market.theta_norm_total();
    let (norm, end) = tilde_norms(market, gamma);
    let log_one_minus_kappa = -(norm / end).ln_1p();
    let lf = quantile.log_tail_ratio_unchecked(quantile.abs_z + q * th);
    -(log_one_minus_kappa + q * th * th + lf).exp_m1()
}

/// Whether the unconstrained equal-exponent optimum already satisfies the
/// ES bound. The margin is `ζ` minus [`es_loose_threshold`].
pub fn es_loose_bound_check(market: &Market, gamma: f64, spec: &RiskSpec) -> Result<Condition> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma={gamma} outside (0, 1)")));
    }
    let psi = PsiFunction::for_market(market, spec.alpha)?;
    if !psi.monotonicity_condition().satisfied {
        return Err(Error::HypothesisViolated {
            abs_z: psi.abs_z(),
            theta_norm: psi.theta_norm,
        });
    }
    let threshold = es_loose_threshold(market, gamma, &psi.quantile);
    Ok(Condition::from_margin("es_loose_threshold", spec.zeta - threshold))
}

/// Linear utility (`γ₁ = γ₂ = 1`): exposure `ρ*_ES θ/‖θ‖_T`, no
/// consumption.
pub fn solve_es_linear(market: &Market, spec: &RiskSpec, x: f64) -> Result<Solution> {
    check_wealth(x)?;
    require_es(spec)?;
    market.require_nonnegative_rates()?;
    let psi = PsiFunction::for_market(market, spec.alpha)?;
    let rho = psi.root(spec.zeta)?;
    let conditions = vec![rate_condition(market), psi.monotonicity_condition()];
    theta_direction_solution(market, x, rho, Regime::EsLinear, conditions)
}

pub fn es_tight_conditions(market: &Market, utility: UtilityParams, spec: &RiskSpec, x: f64) -> Result<Vec<Condition>> {
    let tight = TightRegime::new(market, utility)?;
    let q = spec.quantile()?;
    Ok(vec![
        tight.zeta_condition(x, spec.zeta)?,
        tight.quantile_condition(
            "tight_es_quantile_margin",
            2.0,
            x,
            spec.zeta,
            q.abs_z,
            market.theta_norm_total(),
        ),
    ])
}

/// The riskless regime under an ES bound; same controls and value as under
/// the VaR bound, with a stricter quantile margin.
pub fn solve_es_tight(market: &Market, utility: UtilityParams, spec: &RiskSpec, x: f64) -> Result<Solution> {
    check_wealth(x)?;
    require_es(spec)?;
    market.require_nonnegative_rates()?;
    let tight = TightRegime::new(market, utility)?;
    let mut conditions = vec![rate_condition(market)];
    conditions.extend(es_tight_conditions(market, utility, spec, x)?);
    if conditions.iter().any(|c| !c.satisfied) {
        return Err(Error::ConditionViolated {
            regime: Regime::EsTight.tag(),
            conditions,
        });
    }
    tight.solution(market, Regime::EsTight, x, spec.zeta, conditions)
}

pub fn solve_es_loose(market: &Market, gamma: f64, spec: &RiskSpec, x: f64) -> Result<Solution> {
    check_wealth(x)?;
    require_es(spec)?;
    market.require_nonnegative_rates()?;
    let loose = es_loose_bound_check(market, gamma, spec)?;
    let conditions = vec![rate_condition(market), loose.clone()];
    if !loose.satisfied {
        return Err(Error::ConditionViolated {
            regime: Regime::EsLoose.tag(),
            conditions,
        });
    }
    let mut s = solve_equal_gamma(market, gamma, x)?;
    s.regime = Regime::EsLoose;
    s.conditions = conditions;
    s.notes.push("the unconstrained optimum satisfies the bound".into());
    Ok(s)
}

/// Same dispatch order as the VaR solver. Outside `|z_α| ≥ 2‖θ‖_T` only the
/// riskless regime can apply, and its quantile margin already excludes it
/// unless `θ ≡ 0`.
pub fn solve_es(market: &Market, utility: UtilityParams, spec: &RiskSpec, x: f64) -> Result<Solution> {
    utility.validate()?;
    require_es(spec)?;
    check_wealth(x)?;
    market.require_nonnegative_rates()?;
    if utility.is_linear() {
        return solve_es_linear(market, spec, x);
    }
    if utility.gamma1 >= 1.0 {
        return Err(Error::UnsupportedRegime(format!(
            "ES problem with linear consumption utility and gamma2={}",
            utility.gamma2
        )));
    }
    let psi = PsiFunction::for_market(market, spec.alpha)?;
    let monotone = psi.monotonicity_condition();
    let mut conditions = vec![rate_condition(market), monotone.clone()];
    if utility.is_equal() && monotone.satisfied {
        let loose = es_loose_bound_check(market, utility.gamma1, spec)?;
        if loose.satisfied {
            return solve_es_loose(market, utility.gamma1, spec, x);
        }
        conditions.push(loose);
    }
    let tight = es_tight_conditions(market, utility, spec, x)?;
    if tight.iter().all(|c| c.satisfied) {
        return solve_es_tight(market, utility, spec, x);
    }
    if !monotone.satisfied {
        return Err(Error::HypothesisViolated {
            abs_z: psi.abs_z(),
            theta_norm: psi.theta_norm,
        });
    }
    conditions.extend(tight);
    if utility.is_equal() {
        Err(Error::NoClosedFormRegime { conditions })
    } else {
        Err(Error::ConditionViolated {
            regime: Regime::EsTight.tag(),
            conditions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::{RiskEvaluator, RiskKind};
    use crate::tight::kappa_hat;
    use crate::var::rho_var;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn standard(r: f64) -> Market {
        Market::constant(r, vec![r + 0.1], vec![vec![0.2]], 1.0).unwrap()
    }

    fn es_spec(alpha: f64, zeta: f64) -> RiskSpec {
        RiskSpec::new(RiskKind::Es, alpha, zeta).unwrap()
    }

    #[test]
    fn psi_at_origin_is_zero() {
        let p = PsiFunction::new(0.5, 0.01).unwrap();
        assert!(p.psi(0.0, 1.0).abs() < 1e-15);
        assert!(p.psi(0.0, 0.3).abs() < 1e-15);
    }

    #[test]
    fn reference_root() {
        let p = PsiFunction::new(0.5, 0.01).unwrap();
        let r = p.root(0.1).unwrap();
        assert!((r - 0.048_176_088_255_488_039).abs() < 1e-14);
        assert!((p.psi(r, 1.0) - 0.9f64.ln()).abs() < 1e-14);
        let b = p.root_bound(0.1).unwrap();
        assert!((b - 0.169_549_049_389_924_20).abs() < 1e-14);
        assert!(r < b);
    }

    #[test]
    fn derivatives_match_differences() {
        let p = PsiFunction::new(0.4, 0.02).unwrap();
        let h = 1e-6;
        for (rho, u) in [(0.1, 0.5), (1.0, 0.9), (3.0, 0.2)] {
            let du = (p.psi(rho, u + h) - p.psi(rho, u - h)) / (2.0 * h);
            assert!((du - p.dpsi_du(rho, u)).abs() < 1e-7);
            let dr = (p.psi(rho + h, 1.0) - p.psi(rho - h, 1.0)) / (2.0 * h);
            assert!((dr - p.dpsi_drho(rho)).abs() < 1e-7);
        }
    }

    #[test]
    fn root_shrinks_with_zeta() {
        let p = PsiFunction::new(0.5, 0.01).unwrap();
        assert!(p.root(1e-12).unwrap() < 1e-10);
        let mut prev = 0.0;
        for k in 1..100 {
            let r = p.root(k as f64 / 100.0).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn root_without_bound_expands_bracket() {
        // α = 0.2 gives |z| < 1, so the closed-form bracket is unavailable.
        let p = PsiFunction::new(0.2, 0.2).unwrap();
        assert!(p.root_bound(0.5).is_none());
        let r = p.root(0.999).unwrap();
        assert!((p.psi(r, 1.0) - (-0.999f64).ln_1p()).abs() < 1e-10);
    }

    #[test]
    fn hypothesis_violation() {
        let p = PsiFunction::new(1.5, 0.05).unwrap();
        assert!(matches!(p.root(0.1), Err(Error::HypothesisViolated { .. })));
    }

    #[test]
    fn shortfall_root_below_var_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let alpha = rng.random_range(0.001..0.2);
            let p = PsiFunction::new(0.0, alpha).unwrap();
            let th = rng.random_range(0.0..0.5) * p.abs_z();
            let p = PsiFunction::new(th, alpha).unwrap();
            let zeta = rng.random_range(0.01..0.99);
            assert!(p.root(zeta).unwrap() <= rho_var(p.abs_z(), th, zeta));
        }
    }

    #[test]
    fn linear_value_and_saturation() {
        let m = standard(0.0);
        let spec = es_spec(0.01, 0.1);
        let s = solve_es_linear(&m, &spec, 1.0).unwrap();
        assert!((s.value().unwrap() - 1.024_380_504_608_364_0).abs() < 1e-14);
        let c = s.strategy().unwrap().bind(&m).unwrap();
        let (inf, t) = RiskEvaluator::new(&c, spec.quantile().unwrap()).inf_log_functional(RiskKind::Es, 10_000);
        assert!((inf - spec.log_bound()).abs() < 1e-9);
        assert!((t - 1.0).abs() < 1e-9);
        let v = crate::var::solve_var_linear(&m, &RiskSpec::new(RiskKind::Var, 0.01, 0.1).unwrap(), 1.0).unwrap();
        assert!(s.value().unwrap() <= v.value().unwrap());
    }

    #[test]
    fn linear_without_premium() {
        let m = Market::constant(0.02, vec![0.02], vec![vec![0.3]], 1.0).unwrap();
        let s = solve_es_linear(&m, &es_spec(0.05, 0.3), 2.0).unwrap();
        assert!((s.value().unwrap() - 2.0 * 0.02f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn loose_bound() {
        let m = standard(0.0);
        let spec = es_spec(0.01, 0.999);
        assert!(es_loose_bound_check(&m, 0.5, &spec).unwrap().satisfied);
        let s = solve_es(&m, UtilityParams::equal(0.5).unwrap(), &spec, 1.0).unwrap();
        assert_eq!(s.regime, Regime::EsLoose);
        let c = s.strategy().unwrap().bind(&m).unwrap();
        let (inf, _) = RiskEvaluator::new(&c, spec.quantile().unwrap()).inf_log_functional(RiskKind::Es, 2000);
        assert!(inf >= spec.log_bound());
        assert!(!es_loose_bound_check(&m, 0.5, &es_spec(0.01, 1e-6)).unwrap().satisfied);
    }

    #[test]
    fn loose_threshold_dominates_kappa_hat() {
        for g in 1..20 {
            let gamma = g as f64 / 20.0;
            for th in 0..10 {
                let m = Market::constant(0.02, vec![0.02 + 0.2 * 0.15 * th as f64], vec![vec![0.2]], 1.0).unwrap();
                for alpha in [0.001, 0.01, 0.02, 0.05, 0.1] {
                    let q = normal_quantile(alpha).unwrap();
                    if q.abs_z < 2.0 * m.theta_norm_total() {
                        continue;
                    }
                    assert!(es_loose_threshold(&m, gamma, &q) >= kappa_hat(&m, gamma) - 1e-15);
                }
            }
        }
    }

    #[test]
    fn tight_reference_instance() {
        let m = standard(0.0);
        let s = solve_es(&m, UtilityParams::equal(0.5).unwrap(), &es_spec(0.001, 0.1), 1.0).unwrap();
        assert_eq!(s.regime, Regime::EsTight);
        assert!((s.value().unwrap() - 1.264_911_064_067_351_7).abs() < 1e-14);
        assert!(s.conditions.iter().any(|c| c.name == "tight_es_quantile_margin" && c.satisfied));
    }

    #[test]
    fn tight_quantile_margin_fails_for_wide_alpha() {
        let m = standard(0.0);
        let err = solve_es_tight(&m, UtilityParams::equal(0.5).unwrap(), &es_spec(0.25, 0.1), 1.0).unwrap_err();
        assert!(matches!(err, Error::ConditionViolated { regime: "es-tight", .. }));
    }

    #[test]
    fn zero_premium_tight_for_any_alpha() {
        let m = Market::constant(0.0, vec![0.0], vec![vec![0.2]], 1.0).unwrap();
        for alpha in [0.01, 0.25, 0.49] {
            let s = solve_es_tight(&m, UtilityParams::equal(0.5).unwrap(), &es_spec(alpha, 0.1), 1.0).unwrap();
            assert!((s.value().unwrap() - 1.264_911_064_067_351_7).abs() < 1e-14);
        }
    }

    #[test]
    fn curve_dump() {
        let p = PsiFunction::new(0.5, 0.01).unwrap();
        let c = p.curve(&[0.0, 0.1, 0.2]);
        assert_eq!(c.len(), 3);
        assert!(c[1].1 > c[2].1);
    }
}
