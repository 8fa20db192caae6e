//! Deterministic strategies: exposure `y_t = σ'_t π_t` and consumption rate
//! `v_t`, both non-random functions of time. Wealth under such a strategy is
//! lognormal with exactly computable parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::path::{merge_knots, Piece, Ramp, StepPath, Tick};
use crate::quadrature;

/// Consumption rate of the form `v_t = c1 e^{f(t)} / (c0 - c1 W(t))` with
/// `W(t) = ∫_0^t e^{f}`. Every optimal consumption rate in closed form has
/// this shape; it integrates to `V_t = ln(c0 / (c0 - c1 W(t)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annuity {
    pub c0: f64,
    pub c1: f64,
    pub exponent: Ramp,
}

impl Annuity {
    fn w(&self, t: f64) -> f64 {
        self.exponent.exp_integral(0.0, t)
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.c1 * self.exponent.eval(t).exp() / (self.c0 - self.c1 * self.w(t))
    }

    pub fn cumulative(&self, t: f64) -> f64 {
        -(-self.c1 * self.w(t) / self.c0).ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Consumption {
    Piecewise(StepPath<f64>),
    Annuity(Annuity),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConsumptionSpec {
    Piecewise { pieces: Vec<Piece<f64>> },
    Annuity(Annuity),
}

/// On-disk strategy description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub exposure: Vec<Piece<Vec<f64>>>,
    pub consumption: ConsumptionSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicStrategy {
    exposure: StepPath<Vec<f64>>,
    consumption: Consumption,
}

impl DeterministicStrategy {
    pub fn new(exposure: StepPath<Vec<f64>>, consumption: Consumption) -> Result<Self> {
        let horizon = exposure.horizon();
        let dim = exposure.values()[0].len();
        if exposure.values().iter().any(|y| y.len() != dim) {
            return Err(Error::MismatchedPaths("exposure pieces differ in dimension".into()));
        }
        if exposure.values().iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPath("non-finite exposure".into()));
        }
        match &consumption {
            Consumption::Piecewise(v) => {
                if v.horizon_tick() != exposure.horizon_tick() {
                    return Err(Error::MismatchedPaths(format!(
                        "exposure horizon {horizon} but consumption horizon {}",
                        v.horizon()
                    )));
                }
                if let Some(bad) = v.values().iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidParameter(format!(
                        "consumption rate must be finite and nonnegative, got {bad}"
                    )));
                }
            }
            Consumption::Annuity(a) => {
                if Tick::from_years(a.exponent.end()) != exposure.horizon_tick() {
                    return Err(Error::MismatchedPaths(format!(
                        "exposure horizon {horizon} but consumption horizon {}",
                        a.exponent.end()
                    )));
                }
                if !(a.c0 > 0.0 && a.c1 >= 0.0 && a.c0 - a.c1 * a.w(horizon) > 0.0) {
                    return Err(Error::InvalidParameter(
                        "annuity consumption must keep wealth positive up to the horizon".into(),
                    ));
                }
            }
        }
        Ok(Self {
            exposure,
            consumption,
        })
    }

    /// No risky exposure, no consumption.
    pub fn bond_only(dim: usize, horizon: f64) -> Result<Self> {
        Self::new(
            StepPath::constant(vec![0.0; dim], horizon)?,
            Consumption::Piecewise(StepPath::constant(0.0, horizon)?),
        )
    }

    /// Exposure `y_t = ρ θ_t / ‖θ‖_T` (zero when `‖θ‖_T = 0`).
    pub fn theta_direction(market: &Market, rho: f64, consumption: Consumption) -> Result<Self> {
        let norm = market.theta_norm_total();
        let scale = if norm > 0.0 { rho / norm } else { 0.0 };
        Self::scaled_theta(market, scale, consumption)
    }

    /// Exposure `y_t = s θ_t`.
    pub fn scaled_theta(market: &Market, s: f64, consumption: Consumption) -> Result<Self> {
        let n = market.n_intervals();
        let starts = market.ticks()[..n].to_vec();
        let values = (0..n)
            .map(|i| market.theta(i).iter().map(|t| s * t).collect())
            .collect();
        let exposure = StepPath::new(starts, values, *market.ticks().last().unwrap())?;
        Self::new(exposure, consumption)
    }

    /// Builds a strategy from portfolio weights `π` and consumption rates
    /// given on common pieces `(t0, π, v)`.
    pub fn from_portfolio(market: &Market, pieces: &[(f64, Vec<f64>, f64)]) -> Result<Self> {
        let horizon = market.horizon();
        let pi = StepPath::from_pieces(
            &pieces
                .iter()
                .map(|(t0, p, _)| Piece { t0: *t0, value: p.clone() })
                .collect::<Vec<_>>(),
            horizon,
        )?;
        let v = StepPath::from_pieces(
            &pieces
                .iter()
                .map(|(t0, _, v)| Piece { t0: *t0, value: *v })
                .collect::<Vec<_>>(),
            horizon,
        )?;
        if pi.values().iter().any(|p| p.len() != market.dim()) {
            return Err(Error::MismatchedPaths(format!(
                "portfolio dimension differs from market dimension {}",
                market.dim()
            )));
        }
        let ticks = merge_knots([pi.starts(), market.ticks()], pi.horizon_tick());
        let n = ticks.len() - 1;
        let values = ticks[..n]
            .iter()
            .map(|t| {
                let s = market.sigma(market.interval_at(t.years()));
                let p = pi.value_at_tick(*t);
                (0..market.dim())
                    .map(|j| (0..market.dim()).map(|i| s[(i, j)] * p[i]).sum())
                    .collect()
            })
            .collect();
        let exposure = StepPath::new(ticks[..n].to_vec(), values, pi.horizon_tick())?;
        Self::new(exposure, Consumption::Piecewise(v))
    }

    pub fn from_spec(spec: &StrategySpec) -> Result<Self> {
        let exposure = StepPath::from_pieces(&spec.exposure, spec.horizon)?;
        let consumption = match &spec.consumption {
            ConsumptionSpec::Piecewise { pieces } => {
                Consumption::Piecewise(StepPath::from_pieces(pieces, spec.horizon)?)
            }
            ConsumptionSpec::Annuity(a) => Consumption::Annuity(a.clone()),
        };
        Self::new(exposure, consumption)
    }

    pub fn to_spec(&self) -> StrategySpec {
        StrategySpec {
            horizon: self.horizon(),
            exposure: self.exposure.to_pieces(),
            consumption: match &self.consumption {
                Consumption::Piecewise(v) => ConsumptionSpec::Piecewise {
                    pieces: v.to_pieces(),
                },
                Consumption::Annuity(a) => ConsumptionSpec::Annuity(a.clone()),
            },
        }
    }

    pub fn horizon(&self) -> f64 {
        self.exposure.horizon()
    }

    pub fn dim(&self) -> usize {
        self.exposure.values()[0].len()
    }

    pub fn exposure(&self) -> &StepPath<Vec<f64>> {
        &self.exposure
    }

    pub fn consumption(&self) -> &Consumption {
        &self.consumption
    }

    pub fn exposure_at(&self, t: f64) -> &[f64] {
        self.exposure.value_at(t)
    }

    pub fn consumption_rate(&self, t: f64) -> f64 {
        match &self.consumption {
            Consumption::Piecewise(v) => *v.value_at(t),
            Consumption::Annuity(a) => a.rate(t),
        }
    }

    /// Exact cumulants of the strategy against `market`.
    pub fn bind(&self, market: &Market) -> Result<Cumulants> {
        if market.dim() != self.dim() {
            return Err(Error::MismatchedPaths(format!(
                "strategy dimension {} but market dimension {}",
                self.dim(),
                market.dim()
            )));
        }
        let horizon = self.exposure.horizon_tick();
        if *market.ticks().last().unwrap() != horizon {
            return Err(Error::MismatchedPaths(format!(
                "strategy horizon {} but market horizon {}",
                self.horizon(),
                market.horizon()
            )));
        }
        let extra: Vec<Tick> = match &self.consumption {
            Consumption::Piecewise(v) => v.starts().to_vec(),
            Consumption::Annuity(a) => a.exponent.knots().iter().map(|t| Tick::from_years(*t)).collect(),
        };
        let ticks = merge_knots([market.ticks(), self.exposure.starts(), &extra[..]], horizon);
        let knots: Vec<f64> = ticks.iter().map(|t| t.years()).collect();
        let n = ticks.len() - 1;
        let mut r = Vec::with_capacity(n);
        let mut theta_sq = Vec::with_capacity(n);
        let mut y_sq = Vec::with_capacity(n);
        let mut y_theta = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (k, t) in ticks[..n].iter().enumerate() {
            let i = market.interval_at(knots[k]);
            let y = self.exposure.value_at_tick(*t);
            let th = market.theta(i);
            r.push(market.rate(i));
            theta_sq.push(market.theta_sq(i));
            y_sq.push(y.iter().map(|a| a * a).sum());
            y_theta.push(y.iter().zip(th).map(|(a, b)| a * b).sum());
            v.push(match &self.consumption {
                Consumption::Piecewise(p) => *p.value_at_tick(*t),
                Consumption::Annuity(_) => f64::NAN,
            });
        }
        let (cum_v, annuity) = match &self.consumption {
            Consumption::Piecewise(_) => (Some(Ramp::integrate(&knots, &v)), None),
            Consumption::Annuity(a) => (
                None,
                Some(Annuity {
                    c0: a.c0,
                    c1: a.c1,
                    exponent: a.exponent.refine(&knots),
                }),
            ),
        };
        Ok(Cumulants {
            cum_r: Ramp::integrate(&knots, &r),
            cum_theta_sq: Ramp::integrate(&knots, &theta_sq),
            cum_y_sq: Ramp::integrate(&knots, &y_sq),
            cum_y_theta: Ramp::integrate(&knots, &y_theta),
            knots,
            r,
            theta_sq,
            y_sq,
            y_theta,
            v,
            cum_v,
            annuity,
        })
    }
}

/// Exact piecewise-linear cumulants of a strategy bound to a market, on the
/// union of both breakpoint sets.
#[derive(Debug, Clone)]
pub struct Cumulants {
    knots: Vec<f64>,
    r: Vec<f64>,
    theta_sq: Vec<f64>,
    y_sq: Vec<f64>,
    y_theta: Vec<f64>,
    v: Vec<f64>,
    cum_r: Ramp,
    cum_theta_sq: Ramp,
    cum_y_sq: Ramp,
    cum_y_theta: Ramp,
    cum_v: Option<Ramp>,
    annuity: Option<Annuity>,
}

impl Cumulants {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn n_intervals(&self) -> usize {
        self.r.len()
    }

    /// Per-interval `(r, |θ|², |y|², y'θ)`.
    pub fn rates(&self, i: usize) -> (f64, f64, f64, f64) {
        (self.r[i], self.theta_sq[i], self.y_sq[i], self.y_theta[i])
    }

    /// Constant consumption rate of interval `i`, if consumption is piecewise.
    pub fn piecewise_v(&self, i: usize) -> Option<f64> {
        self.cum_v.as_ref().map(|_| self.v[i])
    }

    pub fn is_piecewise(&self) -> bool {
        self.cum_v.is_some()
    }

    /// `R_t`.
    pub fn r_cum(&self, t: f64) -> f64 {
        self.cum_r.eval(t)
    }

    /// `‖θ‖²_t`.
    pub fn theta_sq_cum(&self, t: f64) -> f64 {
        self.cum_theta_sq.eval(t)
    }

    /// `‖y‖²_t`.
    pub fn y_sq_cum(&self, t: f64) -> f64 {
        self.cum_y_sq.eval(t).max(0.0)
    }

    /// `(y, θ)_t`.
    pub fn y_theta_cum(&self, t: f64) -> f64 {
        self.cum_y_theta.eval(t)
    }

    /// `V_t`.
    pub fn v_cum(&self, t: f64) -> f64 {
        match (&self.cum_v, &self.annuity) {
            (Some(v), _) => v.eval(t),
            (None, Some(a)) => a.cumulative(t),
            _ => unreachable!(),
        }
    }

    pub fn v_rate(&self, t: f64) -> f64 {
        match (&self.cum_v, &self.annuity) {
            (Some(v), _) => v.slope_at(t),
            (None, Some(a)) => a.rate(t),
            _ => unreachable!(),
        }
    }

    /// Mean of `ln(X_t / x)`: `R_t - V_t + (y,θ)_t - ½‖y‖²_t`.
    pub fn log_mean(&self, t: f64) -> f64 {
        self.r_cum(t) - self.v_cum(t) + self.y_theta_cum(t) - 0.5 * self.y_sq_cum(t)
    }

    /// Variance of `ln X_t`: `‖y‖²_t`.
    pub fn log_var(&self, t: f64) -> f64 {
        self.y_sq_cum(t)
    }

    /// `E X_t^γ` for initial wealth `x`.
    pub fn expected_power(&self, x: f64, gamma: f64, t: f64) -> f64 {
        let y2 = self.y_sq_cum(t);
        (gamma * x.ln() + gamma * (self.r_cum(t) - self.v_cum(t) + self.y_theta_cum(t))
            - 0.5 * gamma * (1.0 - gamma) * y2)
            .exp()
    }

    /// `Φ_γ(t) = γ(R - V + (y,θ))_t - γ(1-γ)/2 ‖y‖²_t`, so that
    /// `E X_t^γ = x^γ e^{Φ_γ(t)}`.
    pub fn power_exponent(&self, gamma: f64, t: f64) -> f64 {
        gamma * (self.r_cum(t) - self.v_cum(t) + self.y_theta_cum(t)) - 0.5 * gamma * (1.0 - gamma) * self.y_sq_cum(t)
    }

    /// `∫_a^b v_u^γ e^{Φ_γ(u) - shift} du`, exact.
    ///
    /// With `shift = Φ_γ(a)` this is the conditional expectation of
    /// `∫_a^b (v_u X_u)^γ du` given `X_a = 1`.
    pub fn consumption_integral(&self, gamma: f64, a: f64, b: f64, shift: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let base = self
            .cum_r
            .combine(gamma, &self.cum_y_theta, gamma)
            .combine(1.0, &self.cum_y_sq, -0.5 * gamma * (1.0 - gamma));
        match (&self.cum_v, &self.annuity) {
            (Some(v), _) => {
                let expo = base.combine(1.0, v, -gamma);
                let mut total = 0.0;
                for i in 0..self.n_intervals() {
                    let lo = a.max(self.knots[i]);
                    let hi = b.min(self.knots[i + 1]);
                    if hi > lo && self.v[i] > 0.0 {
                        total += self.v[i].powf(gamma) * expo.exp_integral_shifted(lo, hi, shift);
                    }
                }
                total
            }
            (None, Some(an)) => {
                if an.c1 == 0.0 {
                    return 0.0;
                }
                // v e^{-V} = c1 e^f / c0
                let expo = base.combine(1.0, &an.exponent, gamma);
                (an.c1 / an.c0).powf(gamma) * expo.exp_integral_shifted(a, b, shift)
            }
            _ => unreachable!(),
        }
    }

    /// `J(x, ς) = E(∫_0^T (v_t X_t)^{γ₁} dt + X_T^{γ₂})`, exact.
    pub fn cost(&self, x: f64, gamma1: f64, gamma2: f64) -> f64 {
        let t = self.horizon();
        x.powf(gamma1) * self.consumption_integral(gamma1, 0.0, t, 0.0) + self.expected_power(x, gamma2, t)
    }

    /// The same cost by adaptive quadrature of `v_t^{γ₁} E X_t^{γ₁}`; an
    /// independent check of [`Cumulants::cost`].
    pub fn cost_by_quadrature(&self, x: f64, gamma1: f64, gamma2: f64, rtol: f64) -> f64 {
        let consumption = quadrature::integrate_pieces(
            |t| {
                let v = self.v_rate(t);
                if v > 0.0 {
                    v.powf(gamma1) * self.expected_power(x, gamma1, t)
                } else {
                    0.0
                }
            },
            &self.knots,
            rtol,
        );
        consumption + self.expected_power(x, gamma2, self.horizon())
    }
}
