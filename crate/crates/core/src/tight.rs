//! The riskless regime for small risk bounds: no exposure to the risky
//! assets, with consumption scheduled so that `V_T = -ln(1 - ζ)`.
//!
//! Shared by the VaR and ES solvers; only the quantile margin differs.

use crate::error::{Error, Result};
use crate::gaussian::Quantile;
use crate::market::{Market, Weight};
use crate::path::Ramp;
use crate::roots;
use crate::solution::{Condition, Controls, Regime, Solution, Value, WealthLaw};
use crate::strategy::{Annuity, Consumption, DeterministicStrategy};
use crate::unconstrained::UtilityParams;

/// `κ̂(γ) = N / (N + e^{qγR_T})` with `N = ∫_0^T e^{qγR_t} dt`.
pub fn kappa_hat(market: &Market, gamma: f64) -> f64 {
    let q = 1.0 / (1.0 - gamma);
    let f = market.weight_exponent(gamma, q, Weight::Hat);
    let n = f.exp_integral(0.0, market.horizon());
    // N / (N + e^E) without overflowing for large E.
    let end = f.end_value();
    1.0 / (1.0 + (end - n.ln()).exp())
}

/// `G(x, κ) = x^{γ₁} κ^{γ₁} N₁^{1/q₁} + x^{γ₂} (1-κ)^{γ₂} e^{γ₂R_T}` and the
/// quantities derived from it.
#[derive(Debug, Clone)]
pub struct TightRegime {
    gamma1: f64,
    gamma2: f64,
    q1: f64,
    r_total: f64,
    /// `q₁γ₁R_t`.
    exponent: Ramp,
    /// `N₁ = ∫_0^T e^{q₁γ₁R}`.
    norm: f64,
    dim: usize,
}

impl TightRegime {
    pub fn new(market: &Market, utility: UtilityParams) -> Result<Self> {
        utility.validate()?;
        if !(utility.gamma1 < 1.0) {
            return Err(Error::UnsupportedRegime(format!(
                "riskless regime needs gamma1 < 1, got {}",
                utility.gamma1
            )));
        }
        let q1 = 1.0 / (1.0 - utility.gamma1);
        let exponent = market.weight_exponent(utility.gamma1, q1, Weight::Hat);
        let norm = exponent.exp_integral(0.0, market.horizon());
        Ok(Self {
            gamma1: utility.gamma1,
            gamma2: utility.gamma2,
            q1,
            r_total: market.r_total(),
            exponent,
            norm,
            dim: market.dim(),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.exponent.end()
    }

    pub fn g(&self, x: f64, kappa: f64) -> f64 {
        let (g1, g2) = (self.gamma1, self.gamma2);
        x.powf(g1) * kappa.powf(g1) * self.norm.powf(1.0 / self.q1)
            + x.powf(g2) * (1.0 - kappa).powf(g2) * (g2 * self.r_total).exp()
    }

    /// `∂G/∂κ`; `+∞` at `κ = 0`.
    pub fn dg_dkappa(&self, x: f64, kappa: f64) -> f64 {
        let (g1, g2) = (self.gamma1, self.gamma2);
        g1 * x.powf(g1) * kappa.powf(g1 - 1.0) * self.norm.powf(1.0 / self.q1)
            - g2 * x.powf(g2) * (1.0 - kappa).powf(g2 - 1.0) * (g2 * self.r_total).exp()
    }

    pub fn dlog_g(&self, x: f64, kappa: f64) -> f64 {
        self.dg_dkappa(x, kappa) / self.g(x, kappa)
    }

    /// `κ*(x) = argmax_{0≤κ≤1} G(x, κ)`, by bisection on the derivative of
    /// the concave function `G(x, ·)`.
    pub fn kappa_star(&self, x: f64) -> Result<f64> {
        if self.dg_dkappa(x, 1.0) >= 0.0 {
            return Ok(1.0);
        }
        roots::bisect(|k| self.dg_dkappa(x, k), 0.0, 1.0, 1e-16, 200)
    }

    pub fn kappa_hat(&self) -> f64 {
        1.0 / (1.0 + (self.exponent.end_value() - self.norm.ln()).exp())
    }

    /// `N_t = ∫_0^t e^{q₁γ₁R}`.
    pub fn cumulative_norm(&self, t: f64) -> f64 {
        self.exponent.exp_integral(0.0, t)
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// `v*_t = ζ e^{q₁γ₁R_t} / (N_T - ζ N_t)`.
    pub fn consumption_rate(&self, zeta: f64, t: f64) -> f64 {
        zeta * self.exponent.eval(t).exp() / (self.norm - zeta * self.cumulative_norm(t))
    }

    /// Deterministic wealth `X*_t = x e^{R_t} (N_T - ζ N_t) / N_T`.
    pub fn wealth(&self, market: &Market, x: f64, zeta: f64, t: f64) -> f64 {
        x * market.cum_r().eval(t).exp() * (1.0 - zeta * self.cumulative_norm(t) / self.norm)
    }

    pub fn strategy(&self, zeta: f64) -> Result<DeterministicStrategy> {
        let horizon = self.horizon();
        DeterministicStrategy::new(
            crate::path::StepPath::constant(vec![0.0; self.dim], horizon)?,
            Consumption::Annuity(Annuity {
                c0: self.norm,
                c1: zeta,
                exponent: self.exponent.clone(),
            }),
        )
    }

    /// `0 < ζ < min{κ*(x), κ̂(γ₁)}`.
    pub fn zeta_condition(&self, x: f64, zeta: f64) -> Result<Condition> {
        let cap = self.kappa_star(x)?.min(self.kappa_hat());
        Ok(Condition::strict("tight_zeta_below_kappa", cap - zeta))
    }

    /// `|z_α| ≥ (offset + max{γ₁,γ₂} / ((1-ζ) ∂_ζ ln G(x,ζ))) ‖θ‖_T`, with
    /// offset 1 for VaR and 2 for ES.
    pub fn quantile_condition(
        &self,
        name: &'static str,
        offset: f64,
        x: f64,
        zeta: f64,
        abs_z: f64,
        theta_norm: f64,
    ) -> Condition {
        if theta_norm == 0.0 {
            return Condition::from_margin(name, abs_z);
        }
        let d = self.dlog_g(x, zeta);
        if !(d > 0.0) {
            return Condition::from_margin(name, f64::NEG_INFINITY);
        }
        let rhs = (offset + self.gamma1.max(self.gamma2) / ((1.0 - zeta) * d)) * theta_norm;
        let margin = abs_z - rhs;
        // Accept a boundary case lost to rounding in the derivative.
        Condition {
            name,
            satisfied: margin >= -4.0 * f64::EPSILON * abs_z.max(rhs),
            margin,
        }
    }

    /// `M_i(ϱ(κ)) G(x, κ)` for both utility exponents, where
    /// `ϱ(κ) = √((|z|-‖θ‖)² + 2 ln((1-κ)/(1-ζ))) - (|z|-‖θ‖)` and
    /// `M_i(ρ) = exp(γ_i ρ ‖θ‖ - γ_i(1-γ_i) ρ²/2)`.
    ///
    /// Both products are nondecreasing in `κ ∈ [0, ζ]` when the tight regime
    /// applies.
    pub fn envelope(&self, x: f64, zeta: f64, quantile: &Quantile, theta_norm: f64, kappa: f64) -> [f64; 2] {
        let a = quantile.abs_z - theta_norm;
        let rho = (a * a + 2.0 * ((-kappa).ln_1p() - (-zeta).ln_1p())).max(0.0).sqrt() - a;
        let g = self.g(x, kappa);
        [self.gamma1, self.gamma2].map(|gi| (gi * rho * theta_norm - 0.5 * gi * (1.0 - gi) * rho * rho).exp() * g)
    }

    /// The solution object once the hypotheses have been checked.
    pub fn solution(&self, market: &Market, regime: Regime, x: f64, zeta: f64, conditions: Vec<Condition>) -> Result<Solution> {
        Ok(Solution {
            value: Value::Finite(self.g(x, zeta)),
            regime,
            x0: x,
            conditions,
            notes: vec!["no risky exposure; wealth is deterministic".into()],
            controls: Controls::Deterministic(self.strategy(zeta)?),
            wealth_law: WealthLaw::Riskless {
                x0: x,
                zeta,
                terminal: self.wealth(market, x, zeta, market.horizon()),
            },
        })
    }
}

/// `(G(x, κ), ∂G/∂κ)`.
pub fn big_g(market: &Market, utility: UtilityParams, x: f64, kappa: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::InvalidParameter(format!("kappa={kappa} outside [0, 1]")));
    }
    let t = TightRegime::new(market, utility)?;
    Ok((t.g(x, kappa), t.dg_dkappa(x, kappa)))
}

pub fn kappa_star(market: &Market, utility: UtilityParams, x: f64) -> Result<f64> {
    TightRegime::new(market, utility)?.kappa_star(x)
}
