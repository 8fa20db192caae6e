//! Optimal consumption and investment without a risk constraint.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{Market, Weight};
use crate::path::{Ramp, StepPath};
use crate::roots::safeguarded_newton;
use crate::solution::{Condition, Controls, Regime, Solution, Value, WealthLaw};
use crate::strategy::{Annuity, Consumption, DeterministicStrategy};

/// Power-utility exponents for consumption (`γ₁`) and terminal wealth (`γ₂`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl UtilityParams {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        let u = Self { gamma1, gamma2 };
        u.validate()?;
        Ok(u)
    }

    pub fn equal(gamma: f64) -> Result<Self> {
        Self::new(gamma, gamma)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name}={g} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// `q₁ = 1/(1-γ₁)`; `None` for linear utility.
    pub fn q1(&self) -> Option<f64> {
        conjugate(self.gamma1)
    }

    pub fn q2(&self) -> Option<f64> {
        conjugate(self.gamma2)
    }

    pub fn is_linear(&self) -> bool {
        self.gamma1 == 1.0 && self.gamma2 == 1.0
    }

    pub fn is_equal(&self) -> bool {
        self.gamma1 == self.gamma2
    }
}

/// `1/(1-γ)` for `γ < 1`.
pub fn conjugate(gamma: f64) -> Option<f64> {
    (gamma < 1.0).then(|| 1.0 / (1.0 - gamma))
}

/// The deterministic coefficients `A₁`, `A₂` of the optimal value function
/// and the implicit function `g(t, x)`.
#[derive(Debug, Clone)]
pub struct HaraCoefficients {
    gamma1: f64,
    gamma2: f64,
    q1: f64,
    q2: f64,
    horizon: f64,
    theta: StepPath<Vec<f64>>,
    rate: StepPath<f64>,
    b1: Ramp,
    b2: Ramp,
    cum_r: Ramp,
    cum_theta_sq: Ramp,
    /// Multiplier applied to `A₂`; 1 except in fault-injection runs.
    a2_scale: f64,
}

impl HaraCoefficients {
    pub fn new(market: &Market, utility: UtilityParams) -> Result<Self> {
        utility.validate()?;
        let (Some(q1), Some(q2)) = (utility.q1(), utility.q2()) else {
            return Err(Error::UnsupportedRegime(
                "feedback solution needs gamma1 < 1 and gamma2 < 1".into(),
            ));
        };
        let knots = market.knots();
        let beta = |q: f64| -> Vec<f64> {
            (0..market.n_intervals())
                .map(|i| (q - 1.0) * (market.rate(i) + 0.5 * q * market.theta_sq(i)))
                .collect()
        };
        let n = market.n_intervals();
        let starts = market.ticks()[..n].to_vec();
        let horizon_tick = *market.ticks().last().unwrap();
        Ok(Self {
            gamma1: utility.gamma1,
            gamma2: utility.gamma2,
            q1,
            q2,
            horizon: market.horizon(),
            theta: StepPath::new(starts.clone(), (0..n).map(|i| market.theta(i).to_vec()).collect(), horizon_tick)?,
            rate: StepPath::new(starts, market.rates().to_vec(), horizon_tick)?,
            b1: Ramp::integrate(knots, &beta(q1)),
            b2: Ramp::integrate(knots, &beta(q2)),
            cum_r: market.cum_r().clone(),
            cum_theta_sq: market.cum_theta_sq().clone(),
            a2_scale: 1.0,
        })
    }

    /// Scales `A₂` by `factor`, breaking the terminal condition. Only for
    /// exercising the verification report.
    pub fn with_a2_fault(mut self, factor: f64) -> Self {
        self.a2_scale = factor;
        self
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn q1(&self) -> f64 {
        self.q1
    }

    pub fn q2(&self) -> f64 {
        self.q2
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn theta_at(&self, t: f64) -> &[f64] {
        self.theta.value_at(t)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        *self.rate.value_at(t)
    }

    pub fn theta_sq_at(&self, t: f64) -> f64 {
        self.theta_at(t).iter().map(|v| v * v).sum()
    }

    /// `β₁` on the interval containing `t`.
    pub fn beta1(&self, t: f64) -> f64 {
        self.b1.slope_at(t)
    }

    pub fn beta2(&self, t: f64) -> f64 {
        self.b2.slope_at(t)
    }

    /// `ln A₁(t)`; `-∞` at the horizon.
    pub fn log_a1(&self, t: f64) -> f64 {
        let bt = self.b1.eval(t);
        let shift = bt.max(self.b1.end_value());
        let integral = self.b1.exp_integral_shifted(t, self.horizon, shift);
        self.q1 * self.gamma1.ln() + integral.ln() + shift - bt
    }

    /// `ln A₂(t)`.
    pub fn log_a2(&self, t: f64) -> f64 {
        self.q2 * self.gamma2.ln() + self.b2.end_value() - self.b2.eval(t) + self.a2_scale.ln()
    }

    /// `A₁(t) = γ₁^{q₁} ∫_t^T e^{∫_t^s β₁} ds`.
    pub fn a1(&self, t: f64) -> f64 {
        self.log_a1(t).exp()
    }

    /// `A₂(t) = γ₂^{q₂} e^{∫_t^T β₂}`.
    pub fn a2(&self, t: f64) -> f64 {
        self.log_a2(t).exp()
    }

    /// `Ȧ₁ = -β₁A₁ - γ₁^{q₁}` (right derivative at breakpoints).
    pub fn a1_dot(&self, t: f64) -> f64 {
        -self.beta1(t) * self.a1(t) - self.gamma1.powf(self.q1)
    }

    pub fn a2_dot(&self, t: f64) -> f64 {
        -self.beta2(t) * self.a2(t)
    }

    /// Root `g > 0` of `A₁ g^{-q₁} + A₂ g^{-q₂} = x`.
    pub fn g(&self, t: f64, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::InvalidParameter(format!("wealth must be positive, got {x}")));
        }
        let la1 = self.log_a1(t);
        let la2 = self.log_a2(t);
        let lx = x.ln();
        if la1 == f64::NEG_INFINITY {
            return Ok(((la2 - lx) / self.q2).exp());
        }
        if self.q1 == self.q2 {
            let s = la1.max(la2);
            let lsum = s + ((la1 - s).exp() + (la2 - s).exp()).ln();
            return Ok(((lsum - lx) / self.q1).exp());
        }
        // u = ln g; the left side is decreasing in u.
        let (q1, q2) = (self.q1, self.q2);
        let f = |u: f64| {
            let t1 = (la1 - q1 * u - lx).exp();
            let t2 = (la2 - q2 * u - lx).exp();
            (t1 + t2 - 1.0, -(q1 * t1 + q2 * t2))
        };
        let lo = ((la1 - lx) / q1).max((la2 - lx) / q2);
        let hi = ((la1 - lx + std::f64::consts::LN_2) / q1).max((la2 - lx + std::f64::consts::LN_2) / q2);
        let u = safeguarded_newton(f, lo, hi, 0.5 * (lo + hi), 1e-16, 200, "hara g equation")?;
        Ok(u.exp())
    }

    /// `(A₁ g^{-q₁}, A₂ g^{-q₂})` at `(t, x)`; the two shares of wealth.
    pub fn shares(&self, t: f64, g: f64) -> (f64, f64) {
        let lg = g.ln();
        (
            (self.log_a1(t) - self.q1 * lg).exp(),
            (self.log_a2(t) - self.q2 * lg).exp(),
        )
    }

    /// `p = q₁A₁g^{-q₁} + q₂A₂g^{-q₂}`.
    pub fn p(&self, t: f64, x: f64) -> Result<f64> {
        let g = self.g(t, x)?;
        let (s1, s2) = self.shares(t, g);
        Ok(self.q1 * s1 + self.q2 * s2)
    }

    /// Optimal consumption `c* = (γ₁/g)^{q₁}`.
    pub fn c_star(&self, t: f64, x: f64) -> Result<f64> {
        Ok((self.gamma1 / self.g(t, x)?).powf(self.q1))
    }

    /// Candidate value function `z = A₁/γ₁ g^{1-q₁} + A₂/γ₂ g^{1-q₂}`.
    pub fn value_function(&self, t: f64, x: f64) -> Result<f64> {
        let g = self.g(t, x)?;
        let (s1, s2) = self.shares(t, g);
        Ok(g * (s1 / self.gamma1 + s2 / self.gamma2))
    }

    /// `R_t` and `‖θ‖²_t` of the underlying market.
    pub fn cumulants(&self, t: f64) -> (f64, f64) {
        (self.cum_r.eval(t), self.cum_theta_sq.eval(t))
    }

    pub fn cum_r(&self) -> &Ramp {
        &self.cum_r
    }

    pub fn cum_theta_sq(&self) -> &Ramp {
        &self.cum_theta_sq
    }
}

/// The optimal feedback controls started from wealth `x0`.
#[derive(Debug, Clone)]
pub struct HaraFeedback {
    coefficients: Arc<HaraCoefficients>,
    x0: f64,
    g0: f64,
}

impl HaraFeedback {
    pub fn new(coefficients: HaraCoefficients, x0: f64) -> Result<Self> {
        let g0 = coefficients.g(0.0, x0)?;
        Ok(Self {
            coefficients: Arc::new(coefficients),
            x0,
            g0,
        })
    }

    pub fn coefficients(&self) -> &HaraCoefficients {
        &self.coefficients
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn g0(&self) -> f64 {
        self.g0
    }

    /// Optimal wealth as a function of the Gaussian driver
    /// `ξ_t = -∫(r + ½|θ|²) - ∫θ'dW`.
    pub fn wealth(&self, t: f64, xi: f64) -> f64 {
        let c = &self.coefficients;
        let lg = self.g0.ln() + xi;
        (c.log_a1(t) - c.q1 * lg).exp() + (c.log_a2(t) - c.q2 * lg).exp()
    }

    /// `E ξ_t` and `Var ξ_t`.
    pub fn driver_moments(&self, t: f64) -> (f64, f64) {
        let (r, th) = self.coefficients.cumulants(t);
        (-(r + 0.5 * th), th)
    }

    pub fn wealth_at_mean_driver(&self, _market: &Market, t: f64) -> f64 {
        self.wealth(t, self.driver_moments(t).0)
    }

    /// `E X*_t`, using `E e^{-qξ} = e^{q(R + ½‖θ‖²) + q²‖θ‖²/2}`.
    pub fn expected_wealth(&self, t: f64) -> f64 {
        let c = &self.coefficients;
        let (r, th) = c.cumulants(t);
        let term = |la: f64, q: f64| (la - q * self.g0.ln() + q * (r + 0.5 * th) + 0.5 * q * q * th).exp();
        term(c.log_a1(t), c.q1) + term(c.log_a2(t), c.q2)
    }

    /// Optimal exposure `y* = p(t,x) θ_t / x`.
    pub fn exposure(&self, _market: &Market, t: f64, x: f64) -> Vec<f64> {
        let p = self.coefficients.p(t, x).unwrap_or(f64::NAN);
        self.coefficients.theta_at(t).iter().map(|th| p * th / x).collect()
    }

    /// Optimal consumption `c*(t, x)`.
    pub fn consumption(&self, t: f64, x: f64) -> f64 {
        self.coefficients.c_star(t, x).unwrap_or(f64::NAN)
    }

    /// Drift `a* = r x + p|θ|² - c*` and volatility `b* = pθ` of optimal
    /// wealth.
    pub fn sde_coefficients(&self, t: f64, x: f64) -> Result<(f64, Vec<f64>)> {
        let c = &self.coefficients;
        let g = c.g(t, x)?;
        let (s1, s2) = c.shares(t, g);
        let p = c.q1 * s1 + c.q2 * s2;
        let cs = (c.gamma1 / g).powf(c.q1);
        let th = c.theta_at(t);
        let a = c.rate_at(t) * x + p * c.theta_sq_at(t) - cs;
        Ok((a, th.iter().map(|v| p * v).collect()))
    }

    pub fn value(&self) -> Result<f64> {
        self.coefficients.value_function(0.0, self.x0)
    }
}

pub(crate) fn check_wealth(x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::InvalidParameter(format!("initial wealth must be positive, got {x}")));
    }
    Ok(())
}

/// Linear utility: unbounded unless the market price of risk vanishes, in
/// which case holding the bond is optimal.
pub fn solve_linear_unconstrained(market: &Market, x: f64) -> Result<Solution> {
    check_wealth(x)?;
    market.require_nonnegative_rates()?;
    let min_rate = market.rates().iter().copied().fold(f64::INFINITY, f64::min);
    let conditions = vec![Condition::from_margin("nonnegative_rate", min_rate)];
    if market.theta_norm_total() > 0.0 {
        return Ok(Solution {
            value: Value::Unbounded,
            regime: Regime::UnconstrainedLinear,
            x0: x,
            conditions,
            notes: vec!["nonzero market price of risk: expected wealth is unbounded".into()],
            controls: Controls::None,
            wealth_law: WealthLaw::None,
        });
    }
    let strategy = DeterministicStrategy::bond_only(market.dim(), market.horizon())?;
    Ok(Solution {
        value: Value::Finite(x * market.r_total().exp()),
        regime: Regime::UnconstrainedLinear,
        x0: x,
        conditions,
        notes: vec!["zero market price of risk: any exposure is optimal, zero exposure reported".into()],
        controls: Controls::Deterministic(strategy),
        wealth_law: WealthLaw::Lognormal { x0: x },
    })
}

/// `g(t, x)` for the given market and exponents.
pub fn hara_g(market: &Market, utility: UtilityParams, t: f64, x: f64) -> Result<f64> {
    market.check_time(t)?;
    HaraCoefficients::new(market, utility)?.g(t, x)
}

/// General power utilities with `γ₁, γ₂ < 1`: feedback controls.
pub fn solve_hara_unconstrained(market: &Market, utility: UtilityParams, x: f64) -> Result<Solution> {
    check_wealth(x)?;
    let coefficients = HaraCoefficients::new(market, utility)?;
    let q = (coefficients.q1, coefficients.q2);
    let feedback = HaraFeedback::new(coefficients, x)?;
    Ok(Solution {
        value: Value::Finite(feedback.value()?),
        regime: Regime::UnconstrainedHara,
        x0: x,
        conditions: vec![],
        notes: vec![],
        wealth_law: WealthLaw::HaraFeedback {
            x0: x,
            g0: feedback.g0(),
            q1: q.0,
            q2: q.1,
        },
        controls: Controls::Feedback(feedback),
    })
}

/// `(‖g̃‖^q_{q,T}, g̃^q(T))` for exponent `γ`.
pub fn tilde_norms(market: &Market, gamma: f64) -> (f64, f64) {
    let q = 1.0 / (1.0 - gamma);
    let f = market.weight_exponent(gamma, q, Weight::Tilde);
    (f.exp_integral(0.0, market.horizon()), f.end_value().exp())
}

/// The optimal deterministic strategy for `γ₁ = γ₂ = γ < 1`:
/// `y* = θ/(1-γ)` and `v*_t = g̃^q(t) / (g̃^q(T) + ∫_t^T g̃^q)`.
pub fn equal_gamma_strategy(market: &Market, gamma: f64) -> Result<DeterministicStrategy> {
    let q = 1.0 / (1.0 - gamma);
    let f = market.weight_exponent(gamma, q, Weight::Tilde);
    let (norm, end) = (f.exp_integral(0.0, market.horizon()), f.end_value().exp());
    DeterministicStrategy::scaled_theta(
        market,
        q,
        Consumption::Annuity(Annuity {
            c0: norm + end,
            c1: 1.0,
            exponent: f,
        }),
    )
}

/// `J* = x^γ (‖g̃‖^q_{q,T} + g̃^q(T))^{1/q}`.
pub fn equal_gamma_value(market: &Market, gamma: f64, x: f64) -> f64 {
    let q = 1.0 / (1.0 - gamma);
    let (norm, end) = tilde_norms(market, gamma);
    x.powf(gamma) * (norm + end).powf(1.0 / q)
}

pub fn solve_equal_gamma(market: &Market, gamma: f64, x: f64) -> Result<Solution> {
    check_wealth(x)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma={gamma} outside (0, 1)")));
    }
    Ok(Solution {
        value: Value::Finite(equal_gamma_value(market, gamma, x)),
        regime: Regime::UnconstrainedEqualGamma,
        x0: x,
        conditions: vec![],
        notes: vec![],
        controls: Controls::Deterministic(equal_gamma_strategy(market, gamma)?),
        wealth_law: WealthLaw::Lognormal { x0: x },
    })
}

/// Dispatches on the utility exponents.
pub fn solve_unconstrained(market: &Market, utility: UtilityParams, x: f64) -> Result<Solution> {
    utility.validate()?;
    match (utility.gamma1 < 1.0, utility.gamma2 < 1.0) {
        (false, false) => solve_linear_unconstrained(market, x),
        (true, true) if utility.is_equal() => solve_equal_gamma(market, utility.gamma1, x),
        (true, true) => solve_hara_unconstrained(market, utility, x),
        _ => Err(Error::UnsupportedRegime(format!(
            "unconstrained problem with gamma1={} and gamma2={} mixes linear and strictly concave utility",
            utility.gamma1, utility.gamma2
        ))),
    }
}
