//! Optimal strategies under a uniform Value-at-Risk bound
//! `VaR_t ≤ ζ x e^{R_t}` for all `t ∈ [0, T]`.

use crate::error::{Error, Result};
use crate::market::Market;
use crate::path::StepPath;
use crate::risk::{RiskKind, RiskSpec};
use crate::solution::{Condition, Controls, Regime, Solution, Value, WealthLaw};
use crate::strategy::{Consumption, DeterministicStrategy};
use crate::tight::TightRegime;
use crate::unconstrained::{check_wealth, solve_equal_gamma, tilde_norms, UtilityParams};

/// Largest exposure norm `ρ` with `‖θ‖ρ - ½ρ² - |z_α|ρ ≥ ln(1-ζ)`:
/// `ρ = √((|z_α| - ‖θ‖)² - 2 ln(1-ζ)) - (|z_α| - ‖θ‖)`.
pub fn rho_var(abs_z: f64, theta_norm: f64, zeta: f64) -> f64 {
    let a = abs_z - theta_norm;
    let b = -2.0 * (-zeta).ln_1p();
    let root = (a * a + b).sqrt();
    if a > 0.0 {
        b / (root + a)
    } else {
        root - a
    }
}

/// `‖θ‖ρ - ½ρ² - |z_α|ρ - ln(1-ζ)`; zero at [`rho_var`].
pub fn rho_var_residual(abs_z: f64, theta_norm: f64, zeta: f64, rho: f64) -> f64 {
    theta_norm * rho - 0.5 * rho * rho - abs_z * rho - (-zeta).ln_1p()
}

pub fn rho_var_for(market: &Market, spec: &RiskSpec) -> Result<f64> {
    let q = spec.quantile()?;
    Ok(rho_var(q.abs_z, market.theta_norm_total(), spec.zeta))
}

/// `max(0, 1 - e^{z²/2 - |z|‖θ‖}) < ζ`; the upper end `ζ < 1` is enforced by
/// [`RiskSpec::validate`].
pub fn var_linear_window(abs_z: f64, theta_norm: f64, zeta: f64) -> Condition {
    let lower = (-(0.5 * abs_z * abs_z - abs_z * theta_norm).exp_m1()).max(0.0);
    Condition::strict("var_linear_zeta_window", zeta - lower)
}

/// `κ̃(γ) = Ñ / (Ñ + g̃^q(T))`, the fraction of wealth consumed by the
/// unconstrained equal-exponent optimum.
pub fn kappa_tilde(market: &Market, gamma: f64) -> f64 {
    let (norm, end) = tilde_norms(market, gamma);
    norm / (norm + end)
}

/// `l*(γ) = -q‖θ‖_T|z_α| + ln(1 - κ̃(γ))`, minus `q(q-2)/2 ‖θ‖²_T` when
/// `γ > 1/2`. A lower bound on the VaR log functional of the unconstrained
/// equal-exponent optimum.
pub fn l_star(market: &Market, gamma: f64, abs_z: f64) -> f64 {
    let q = 1.0 / (1.0 - gamma);
    let th = market.theta_norm_total();
    let (norm, end) = tilde_norms(market, gamma);
    let l_tilde = -(norm / end).ln_1p();
    let mut l = -q * th * abs_z + l_tilde;
    if gamma > 0.5 {
        l -= 0.5 * q * (q - 2.0) * th * th;
    }
    l
}

/// `1 - e^{l*(γ)} ≤ ζ`: the unconstrained optimum already satisfies the
/// bound. The margin is `ζ - (1 - e^{l*})`.
pub fn var_loose_bound_check(market: &Market, gamma: f64, spec: &RiskSpec) -> Result<Condition> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma={gamma} outside (0, 1)")));
    }
    let q = spec.quantile()?;
    let threshold = -l_star(market, gamma, q.abs_z).exp_m1();
    Ok(Condition::from_margin("var_loose_threshold", spec.zeta - threshold))
}

pub(crate) fn rate_condition(market: &Market) -> Condition {
    let min_rate = market.rates().iter().copied().fold(f64::INFINITY, f64::min);
    Condition::from_margin("nonnegative_rate", min_rate)
}

fn require_kind(spec: &RiskSpec, kind: RiskKind) -> Result<()> {
    spec.validate()?;
    if spec.kind != kind {
        return Err(Error::InvalidParameter(format!(
            "expected a {kind:?} constraint, got {:?}",
            spec.kind
        )));
    }
    Ok(())
}

pub(crate) fn require_var(spec: &RiskSpec) -> Result<()> {
    require_kind(spec, RiskKind::Var)
}

pub(crate) fn require_es(spec: &RiskSpec) -> Result<()> {
    require_kind(spec, RiskKind::Es)
}

/// Linear utility with exposure `ρ θ/‖θ‖_T` and no consumption, worth
/// `x e^{ρ‖θ‖_T + R_T}`.
pub(crate) fn theta_direction_solution(
    market: &Market,
    x: f64,
    rho: f64,
    regime: Regime,
    conditions: Vec<Condition>,
) -> Result<Solution> {
    let th = market.theta_norm_total();
    let horizon = market.horizon();
    let no_consumption = Consumption::Piecewise(StepPath::constant(0.0, horizon)?);
    let (strategy, notes) = if th > 0.0 {
        (DeterministicStrategy::theta_direction(market, rho, no_consumption)?, vec![])
    } else {
        (
            DeterministicStrategy::new(StepPath::constant(vec![0.0; market.dim()], horizon)?, no_consumption)?,
            vec![format!(
                "zero market price of risk: any exposure with norm at most {rho} is optimal, zero exposure reported"
            )],
        )
    };
    Ok(Solution {
        value: Value::Finite(x * (rho * th + market.r_total()).exp()),
        regime,
        x0: x,
        conditions,
        notes,
        controls: Controls::Deterministic(strategy),
        wealth_law: WealthLaw::Lognormal { x0: x },
    })
}

/// Linear utility (`γ₁ = γ₂ = 1`).
pub fn solve_var_linear(market: &Market, spec: &RiskSpec, x: f64) -> Result<Solution> {
    check_wealth(x)?;
    require_var(spec)?;
    market.require_nonnegative_rates()?;
    let q = spec.quantile()?;
    let th = market.theta_norm_total();
    let window = var_linear_window(q.abs_z, th, spec.zeta);
    let conditions = vec![rate_condition(market), window.clone()];
    if !window.satisfied {
        return Err(Error::ConditionViolated {
            regime: Regime::VarLinear.tag(),
            conditions,
        });
    }
    let rho = rho_var(q.abs_z, th, spec.zeta);
    theta_direction_solution(market, x, rho, Regime::VarLinear, conditions)
}

/// Hypotheses of the riskless regime under a VaR bound.
pub fn var_tight_conditions(market: &Market, utility: UtilityParams, spec: &RiskSpec, x: f64) -> Result<Vec<Condition>> {
    let tight = TightRegime::new(market, utility)?;
    let q = spec.quantile()?;
    Ok(vec![
        tight.zeta_condition(x, spec.zeta)?,
        tight.quantile_condition(
            "tight_var_quantile_margin",
            1.0,
            x,
            spec.zeta,
            q.abs_z,
            market.theta_norm_total(),
        ),
    ])
}

/// Riskless regime: zero exposure, consumption that spends exactly the
/// admissible fraction `ζ` of the bond-compounded wealth.
pub fn solve_var_tight(market: &Market, utility: UtilityParams, spec: &RiskSpec, x: f64) -> Result<Solution> {
    check_wealth(x)?;
    require_var(spec)?;
    market.require_nonnegative_rates()?;
    let tight = TightRegime::new(market, utility)?;
    let mut conditions = vec![rate_condition(market)];
    conditions.extend(var_tight_conditions(market, utility, spec, x)?);
    if conditions.iter().any(|c| !c.satisfied) {
        return Err(Error::ConditionViolated {
            regime: Regime::VarTight.tag(),
            conditions,
        });
    }
    tight.solution(market, Regime::VarTight, x, spec.zeta, conditions)
}

/// Equal exponents `γ < 1` when the unconstrained optimum is feasible.
pub fn solve_var_loose(market: &Market, gamma: f64, spec: &RiskSpec, x: f64) -> Result<Solution> {
    check_wealth(x)?;
    require_var(spec)?;
    market.require_nonnegative_rates()?;
    let loose = var_loose_bound_check(market, gamma, spec)?;
    let conditions = vec![rate_condition(market), loose.clone()];
    if !loose.satisfied {
        return Err(Error::ConditionViolated {
            regime: Regime::VarLoose.tag(),
            conditions,
        });
    }
    let mut s = solve_equal_gamma(market, gamma, x)?;
    s.regime = Regime::VarLoose;
    s.conditions = conditions;
    s.notes.push("the unconstrained optimum satisfies the bound".into());
    Ok(s)
}

/// Picks the closed-form regime that applies: linear utility, then the
/// loose bound, then the riskless regime. Inputs covered by none of them are
/// reported with every margin rather than approximated.
pub fn solve_var(market: &Market, utility: UtilityParams, spec: &RiskSpec, x: f64) -> Result<Solution> {
    utility.validate()?;
    require_var(spec)?;
    check_wealth(x)?;
    market.require_nonnegative_rates()?;
    if utility.is_linear() {
        return solve_var_linear(market, spec, x);
    }
    if utility.gamma1 >= 1.0 {
        return Err(Error::UnsupportedRegime(format!(
            "VaR problem with linear consumption utility and gamma2={}",
            utility.gamma2
        )));
    }
    let mut conditions = vec![rate_condition(market)];
    if utility.is_equal() {
        let loose = var_loose_bound_check(market, utility.gamma1, spec)?;
        if loose.satisfied {
            return solve_var_loose(market, utility.gamma1, spec, x);
        }
        conditions.push(loose);
    }
    let tight = var_tight_conditions(market, utility, spec, x)?;
    if tight.iter().all(|c| c.satisfied) {
        return solve_var_tight(market, utility, spec, x);
    }
    conditions.extend(tight);
    if utility.is_equal() {
        Err(Error::NoClosedFormRegime { conditions })
    } else {
        Err(Error::ConditionViolated {
            regime: Regime::VarTight.tag(),
            conditions,
        })
    }
}
