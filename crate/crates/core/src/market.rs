//! Black–Scholes market with piecewise-constant coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::{merge_knots, Piece, Ramp, StepPath, Tick};

/// Reciprocal condition number below which a volatility block is singular.
pub const SINGULAR_RCOND: f64 = 1e-10;

/// On-disk market description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub d: usize,
    pub r: Vec<Piece<f64>>,
    pub mu: Vec<Piece<Vec<f64>>>,
    pub sigma: Vec<Piece<Vec<Vec<f64>>>>,
}

/// Which of the two deterministic weight functions to integrate.
///
/// `Hat` is `e^{γ R_t}`; `Tilde` is `e^{γ R_t + (q-1)/2 ‖θ‖²_t}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    Hat,
    Tilde,
}

#[derive(Debug, Clone)]
pub struct Market {
    dim: usize,
    rates: StepPath<f64>,
    drifts: StepPath<Vec<f64>>,
    vols: StepPath<Vec<Vec<f64>>>,
    ticks: Vec<Tick>,
    knots: Vec<f64>,
    r: Vec<f64>,
    theta: Vec<Vec<f64>>,
    theta_sq: Vec<f64>,
    sigma: Vec<DMatrix<f64>>,
    cum_r: Ramp,
    cum_theta_sq: Ramp,
}

fn matrix(rows: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

fn rcond(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if max == 0.0 || !max.is_finite() {
        0.0
    } else {
        min / max
    }
}

impl Market {
    pub fn new(rates: StepPath<f64>, drifts: StepPath<Vec<f64>>, vols: StepPath<Vec<Vec<f64>>>) -> Result<Self> {
        let horizon = rates.horizon_tick();
        if drifts.horizon_tick() != horizon || vols.horizon_tick() != horizon {
            return Err(Error::MismatchedPaths(format!(
                "horizons r={}, mu={}, sigma={}",
                rates.horizon(),
                drifts.horizon(),
                vols.horizon()
            )));
        }
        let dim = drifts.values()[0].len();
        if dim == 0 {
            return Err(Error::MismatchedPaths("zero-dimensional drift".into()));
        }
        for (i, mu) in drifts.values().iter().enumerate() {
            if mu.len() != dim {
                return Err(Error::MismatchedPaths(format!(
                    "drift piece {i} has dimension {} instead of {dim}",
                    mu.len()
                )));
            }
        }
        for (i, s) in vols.values().iter().enumerate() {
            if s.len() != dim || s.iter().any(|row| row.len() != dim) {
                return Err(Error::MismatchedPaths(format!(
                    "volatility piece {i} is not {dim}x{dim}"
                )));
            }
        }
        let finite = rates.values().iter().all(|v| v.is_finite())
            && drifts.values().iter().flatten().all(|v| v.is_finite())
            && vols.values().iter().flatten().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidPath("non-finite coefficient".into()));
        }
        for (start, s) in vols.starts().iter().zip(vols.values()) {
            let rc = rcond(&matrix(s, dim));
            if !(rc >= SINGULAR_RCOND) {
                return Err(Error::SingularVolatility {
                    t0: start.years(),
                    rcond: rc,
                });
            }
        }

        let ticks = merge_knots(
            [rates.starts(), drifts.starts(), vols.starts()],
            horizon,
        );
        let knots: Vec<f64> = ticks.iter().map(|t| t.years()).collect();
        let n = ticks.len() - 1;
        let mut r = Vec::with_capacity(n);
        let mut theta = Vec::with_capacity(n);
        let mut theta_sq = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(n);
        for &t in &ticks[..n] {
            let ri = *rates.value_at_tick(t);
            let mu = drifts.value_at_tick(t);
            let s = matrix(vols.value_at_tick(t), dim);
            let excess = DVector::from_iterator(dim, mu.iter().map(|m| m - ri));
            let th = s
                .clone()
                .lu()
                .solve(&excess)
                .ok_or(Error::SingularVolatility {
                    t0: t.years(),
                    rcond: 0.0,
                })?;
            let th: Vec<f64> = th.iter().copied().collect();
            theta_sq.push(th.iter().map(|v| v * v).sum());
            theta.push(th);
            r.push(ri);
            sigma.push(s);
        }
        let cum_r = Ramp::integrate(&knots, &r);
        let cum_theta_sq = Ramp::integrate(&knots, &theta_sq);
        Ok(Self {
            dim,
            rates,
            drifts,
            vols,
            ticks,
            knots,
            r,
            theta,
            theta_sq,
            sigma,
            cum_r,
            cum_theta_sq,
        })
    }

    /// Constant coefficients on `[0, horizon]`.
    pub fn constant(r: f64, mu: Vec<f64>, sigma: Vec<Vec<f64>>, horizon: f64) -> Result<Self> {
        Self::new(
            StepPath::constant(r, horizon)?,
            StepPath::constant(mu, horizon)?,
            StepPath::constant(sigma, horizon)?,
        )
    }

    pub fn from_spec(spec: &MarketSpec) -> Result<Self> {
        let m = Self::new(
            StepPath::from_pieces(&spec.r, spec.horizon)?,
            StepPath::from_pieces(&spec.mu, spec.horizon)?,
            StepPath::from_pieces(&spec.sigma, spec.horizon)?,
        )?;
        if m.dim != spec.d {
            return Err(Error::MismatchedPaths(format!(
                "declared d={} but coefficients have dimension {}",
                spec.d, m.dim
            )));
        }
        Ok(m)
    }

    pub fn to_spec(&self) -> MarketSpec {
        MarketSpec {
            horizon: self.horizon(),
            d: self.dim,
            r: self.rates.to_pieces(),
            mu: self.drifts.to_pieces(),
            sigma: self.vols.to_pieces(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Union of all coefficient breakpoints, including 0 and T.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn ticks(&self) -> &[Tick] {
        &self.ticks
    }

    pub fn n_intervals(&self) -> usize {
        self.r.len()
    }

    /// Index of the interval containing `t` (right-continuous, T maps to the
    /// last interval).
    pub fn interval_at(&self, t: f64) -> usize {
        let tick = Tick::from_years(t);
        self.ticks
            .partition_point(|k| *k <= tick)
            .clamp(1, self.n_intervals())
            - 1
    }

    pub fn rate(&self, i: usize) -> f64 {
        self.r[i]
    }

    pub fn rates(&self) -> &[f64] {
        &self.r
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        &self.theta[i]
    }

    pub fn theta_sq(&self, i: usize) -> f64 {
        self.theta_sq[i]
    }

    pub fn theta_sqs(&self) -> &[f64] {
        &self.theta_sq
    }

    pub fn sigma(&self, i: usize) -> &DMatrix<f64> {
        &self.sigma[i]
    }

    pub fn drift(&self, i: usize) -> &[f64] {
        self.drifts.value_at_tick(self.ticks[i])
    }

    /// `t ↦ R_t`.
    pub fn cum_r(&self) -> &Ramp {
        &self.cum_r
    }

    /// `t ↦ ‖θ‖²_t`.
    pub fn cum_theta_sq(&self) -> &Ramp {
        &self.cum_theta_sq
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon()).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon(),
            });
        }
        Ok(())
    }

    /// `‖θ‖_t`.
    pub fn theta_norm(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.cum_theta_sq.eval(t).max(0.0).sqrt())
    }

    /// `‖θ‖_T`.
    pub fn theta_norm_total(&self) -> f64 {
        self.cum_theta_sq.end_value().max(0.0).sqrt()
    }

    pub fn r_total(&self) -> f64 {
        self.cum_r.end_value()
    }

    /// Fails with the first interval on which `r < 0`.
    pub fn require_nonnegative_rates(&self) -> Result<()> {
        for (i, r) in self.r.iter().enumerate() {
            if *r < 0.0 {
                return Err(Error::NegativeRate {
                    t0: self.knots[i],
                    rate: *r,
                });
            }
        }
        Ok(())
    }

    /// The exponent of `g^q`, i.e. `qγR_t` plus `q(q-1)/2 ‖θ‖²_t` for the
    /// tilde weight.
    pub fn weight_exponent(&self, gamma: f64, q: f64, weight: Weight) -> Ramp {
        let hat = self.cum_r.scale(q * gamma);
        match weight {
            Weight::Hat => hat,
            Weight::Tilde => hat.combine(1.0, &self.cum_theta_sq, 0.5 * q * (q - 1.0)),
        }
    }

    /// `g^q(t)` for the given weight.
    pub fn weight_power(&self, gamma: f64, q: f64, weight: Weight, t: f64) -> f64 {
        self.weight_exponent(gamma, q, weight).eval(t).exp()
    }

    /// `‖g‖^q_{q,t} = ∫_0^t g^q(u) du`, exact.
    pub fn weighted_g_norm(&self, gamma: f64, q: f64, t: f64, weight: Weight) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.weight_exponent(gamma, q, weight).exp_integral(0.0, t))
    }

    /// Portfolio weights `π = (σ')⁻¹ y` on the interval containing `t`.
    pub fn pi_from_y(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let s = &self.sigma[self.interval_at(t)];
        let rhs = DVector::from_column_slice(y);
        s.transpose()
            .lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_else(|| vec![f64::NAN; y.len()])
    }

    /// Largest relative residual of `σθ = μ - r1` over the intervals.
    pub fn reconstruction_residual(&self) -> f64 {
        (0..self.n_intervals())
            .map(|i| {
                let th = DVector::from_column_slice(&self.theta[i]);
                let lhs = &self.sigma[i] * th;
                let mu = self.drift(i);
                let scale = mu.iter().map(|m| m.abs()).fold(self.r[i].abs(), f64::max).max(1e-300);
                lhs.iter()
                    .zip(mu)
                    .map(|(l, m)| (l - (m - self.r[i])).abs() / scale)
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature;

    fn scalar(r: f64, mu: f64, sigma: f64, t: f64) -> Market {
        Market::constant(r, vec![mu], vec![vec![sigma]], t).unwrap()
    }

    #[test]
    fn constant_scalar_market() {
        let m = scalar(0.0, 0.1, 0.2, 1.0);
        assert!((m.theta(0)[0] - 0.5).abs() < 1e-15);
        assert_eq!(m.r_total(), 0.0);
        assert!((m.cum_theta_sq().eval(1.0) - 0.25).abs() < 1e-15);
        assert!((m.theta_norm(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(m.theta_norm(0.0).unwrap(), 0.0);
        assert!(matches!(m.theta_norm(1.5), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn zero_risk_premium() {
        let m = Market::constant(0.03, vec![0.03, 0.03], vec![vec![0.2, 0.05], vec![0.0, 0.3]], 2.0).unwrap();
        assert!(m.theta_norm_total() < 1e-15);
    }

    #[test]
    fn two_assets_identity_vol() {
        let m = Market::constant(0.0, vec![0.3, 0.4], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 2.0).unwrap();
        assert!((m.cum_theta_sq().eval(2.0) - 0.5).abs() < 1e-15);
        let trap = quadrature::integrate(|_| m.theta_sq(0), 0.0, 2.0, 1e-12);
        assert!((trap - 0.5).abs() < 1e-9);
    }

    #[test]
    fn piecewise_theta_norm() {
        let spec = MarketSpec {
            horizon: 1.0,
            d: 1,
            r: vec![Piece { t0: 0.0, value: 0.0 }],
            mu: vec![Piece { t0: 0.0, value: vec![1.0] }, Piece { t0: 0.5, value: vec![2.0] }],
            sigma: vec![Piece { t0: 0.0, value: vec![vec![1.0]] }],
        };
        let m = Market::from_spec(&spec).unwrap();
        assert!((m.theta_norm(1.0).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.n_intervals(), 2);
    }

    #[test]
    fn singular_volatility_rejected() {
        let err = Market::constant(0.0, vec![0.1, 0.1], vec![vec![1.0, 1.0], vec![1.0, 1.0]], 1.0).unwrap_err();
        assert!(matches!(err, Error::SingularVolatility { .. }));
        let err = Market::constant(0.0, vec![0.1, 0.1], vec![vec![1.0, 0.0], vec![0.0, 1e-12]], 1.0).unwrap_err();
        assert!(matches!(err, Error::SingularVolatility { .. }));
    }

    #[test]
    fn mismatched_horizons_rejected() {
        let err = Market::new(
            StepPath::constant(0.0, 1.0).unwrap(),
            StepPath::constant(vec![0.1], 2.0).unwrap(),
            StepPath::constant(vec![vec![0.2]], 1.0).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MismatchedPaths(_)));
        let err = Market::constant(0.0, vec![0.1, 0.2], vec![vec![0.2]], 1.0).unwrap_err();
        assert!(matches!(err, Error::MismatchedPaths(_)));
    }

    #[test]
    fn weighted_norms() {
        let m = scalar(0.0, 0.0, 0.3, 1.5);
        for g in [0.2, 0.5, 0.9] {
            let q = 1.0 / (1.0 - g);
            assert!((m.weighted_g_norm(g, q, 1.5, Weight::Hat).unwrap() - 1.5).abs() < 1e-15);
            assert!((m.weighted_g_norm(g, q, 1.5, Weight::Tilde).unwrap() - 1.5).abs() < 1e-15);
            assert_eq!(m.weighted_g_norm(g, q, 0.0, Weight::Tilde).unwrap(), 0.0);
        }
        let m = scalar(0.05, 0.1, 0.2, 1.0);
        let v = m.weighted_g_norm(0.5, 2.0, 1.0, Weight::Hat).unwrap();
        assert!((v - 1.025_421_927_520_480_8).abs() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"T":2.0,"d":1,"r":[{"t0":0.0,"value":0.01},{"t0":1.25,"value":0.02}],
            "mu":[{"t0":0.0,"value":[0.08]}],"sigma":[{"t0":0.0,"value":[[0.25]]},{"t0":0.5,"value":[[0.3]]}]}"#;
        let spec: MarketSpec = serde_json::from_str(text).unwrap();
        let m = Market::from_spec(&spec).unwrap();
        assert_eq!(m.n_intervals(), 3);
        assert_eq!(m.to_spec(), spec);
        let again: MarketSpec = serde_json::from_str(&serde_json::to_string(&m.to_spec()).unwrap()).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn pi_recovers_from_exposure() {
        let m = Market::constant(0.01, vec![0.05, 0.07], vec![vec![0.2, 0.0], vec![0.05, 0.25]], 1.0).unwrap();
        let pi = vec![0.3, -0.2];
        let s = m.sigma(0);
        let y: Vec<f64> = (s.transpose() * DVector::from_column_slice(&pi)).iter().copied().collect();
        let back = m.pi_from_y(0.5, &y);
        for (a, b) in back.iter().zip(&pi) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(m.reconstruction_residual() < 1e-12);
    }
}
