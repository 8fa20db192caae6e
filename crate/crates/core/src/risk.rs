//! Value-at-Risk and Expected Shortfall of lognormal wealth, measured
//! against the bond benchmark `x e^{R_t}`, and the uniform constraint
//! `sup_t measure_t / (ζ x e^{R_t}) <= 1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{normal_quantile, Quantile};
use crate::market::Market;
use crate::strategy::{Cumulants, DeterministicStrategy};

/// Tolerance on constraint saturation.
pub const SATURATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskKind {
    Var,
    Es,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSpec {
    pub kind: RiskKind,
    pub alpha: f64,
    pub zeta: f64,
}

impl RiskSpec {
    pub fn new(kind: RiskKind, alpha: f64, zeta: f64) -> Result<Self> {
        let s = Self { kind, alpha, zeta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::InvalidParameter(format!("zeta={} outside (0, 1)", self.zeta)));
        }
        Ok(())
    }

    pub fn quantile(&self) -> Result<Quantile> {
        self.validate()?;
        normal_quantile(self.alpha)
    }

    /// `ln(1 - ζ)`, the lower bound on the log functional.
    pub fn log_bound(&self) -> f64 {
        (-self.zeta).ln_1p()
    }
}

/// Closed-form risk quantities of one bound strategy at one quantile level.
#[derive(Debug, Clone, Copy)]
pub struct RiskEvaluator<'a> {
    pub cumulants: &'a Cumulants,
    pub quantile: Quantile,
}

impl<'a> RiskEvaluator<'a> {
    pub fn new(cumulants: &'a Cumulants, quantile: Quantile) -> Self {
        Self { cumulants, quantile }
    }

    /// α-quantile of `X_t`:
    /// `λ_t = x exp(R - V + (y,θ) - ½‖y‖² - |z_α|‖y‖)`.
    pub fn lambda(&self, x: f64, t: f64) -> f64 {
        let c = self.cumulants;
        x * (c.log_mean(t) - self.quantile.abs_z * c.y_sq_cum(t).sqrt()).exp()
    }

    pub fn value_at_risk(&self, x: f64, t: f64) -> f64 {
        x * self.cumulants.r_cum(t).exp() - self.lambda(x, t)
    }

    /// Mean of `X_t` below its α-quantile:
    /// `m_t = x F_α(|z_α| + ‖y‖) e^{R + (y,θ) - V}`.
    pub fn shortfall_mean(&self, x: f64, t: f64) -> f64 {
        let c = self.cumulants;
        let lf = self.quantile.log_tail_ratio_unchecked(self.quantile.abs_z + c.y_sq_cum(t).sqrt());
        x * (lf + c.r_cum(t) + c.y_theta_cum(t) - c.v_cum(t)).exp()
    }

    pub fn expected_shortfall(&self, x: f64, t: f64) -> f64 {
        x * self.cumulants.r_cum(t).exp() - self.shortfall_mean(x, t)
    }

    /// `L_t = (y,θ) - V - ½‖y‖² - |z_α|‖y‖`, i.e. `ln(λ_t / (x e^{R_t}))`.
    pub fn log_var_functional(&self, t: f64) -> f64 {
        let c = self.cumulants;
        let y2 = c.y_sq_cum(t);
        c.y_theta_cum(t) - c.v_cum(t) - 0.5 * y2 - self.quantile.abs_z * y2.sqrt()
    }

    /// `L*_t = (y,θ) - V + ln F_α(|z_α| + ‖y‖)`, i.e. `ln(m_t / (x e^{R_t}))`.
    pub fn log_es_functional(&self, t: f64) -> f64 {
        let c = self.cumulants;
        c.y_theta_cum(t) - c.v_cum(t)
            + self
                .quantile
                .log_tail_ratio_unchecked(self.quantile.abs_z + c.y_sq_cum(t).sqrt())
    }

    pub fn log_functional(&self, kind: RiskKind, t: f64) -> f64 {
        match kind {
            RiskKind::Var => self.log_var_functional(t),
            RiskKind::Es => self.log_es_functional(t),
        }
    }

    /// Minimisers of the VaR functional inside each interval, where it is
    /// convex (piecewise-constant consumption only).
    fn var_critical_points(&self) -> Vec<f64> {
        let c = self.cumulants;
        if !c.is_piecewise() {
            return vec![];
        }
        let knots = c.knots();
        let mut out = vec![];
        for i in 0..c.n_intervals() {
            let (_, _, a, yt) = c.rates(i);
            let v = c.piecewise_v(i).unwrap_or(0.0);
            let k = yt - v - 0.5 * a;
            if a <= 0.0 || k <= 0.0 {
                continue;
            }
            let y0 = c.y_sq_cum(knots[i]);
            let root = self.quantile.abs_z * a / (2.0 * k);
            let s = knots[i] + (root * root - y0) / a;
            if s > knots[i] && s < knots[i + 1] {
                out.push(s);
            }
        }
        out
    }

    /// Infimum of the log functional over `[0, T]` and where it is attained.
    ///
    /// Evaluates `n` uniform points plus every breakpoint, adds the exact
    /// interior minimisers of the VaR functional when available, and polishes
    /// the best grid point by golden-section search over its two neighbouring
    /// cells.
    pub fn inf_log_functional(&self, kind: RiskKind, n: usize) -> (f64, f64) {
        let mut grid = profile_grid(self.cumulants, n);
        if kind == RiskKind::Var {
            grid.extend(self.var_critical_points());
            grid.sort_by(f64::total_cmp);
            grid.dedup();
        }
        let f = |t: f64| self.log_functional(kind, t);
        let (mut best_t, mut best) = (grid[0], f(grid[0]));
        let mut best_j = 0;
        for (j, &t) in grid.iter().enumerate() {
            let v = f(t);
            if v < best {
                best = v;
                best_t = t;
                best_j = j;
            }
        }
        let lo = grid[best_j.saturating_sub(1)];
        let hi = grid[(best_j + 1).min(grid.len() - 1)];
        if hi > lo {
            let (t, v) = golden_min(f, lo, hi, 80);
            if v < best {
                best = v;
                best_t = t;
            }
        }
        (best, best_t)
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// `n` uniform points on `[0, T]` merged with all breakpoints.
pub fn profile_grid(c: &Cumulants, n: usize) -> Vec<f64> {
    let t_end = c.horizon();
    let n = n.max(2);
    let mut grid: Vec<f64> = (0..n).map(|i| t_end * (i as f64 / (n - 1) as f64)).collect();
    grid.extend_from_slice(c.knots());
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// VaR and ES curves together with the constraint verdicts in ratio and in
/// log form.
#[derive(Debug, Clone, Serialize)]
pub struct RiskProfile {
    pub kind: RiskKind,
    pub alpha: f64,
    pub zeta: f64,
    pub times: Vec<f64>,
    pub var: Vec<f64>,
    pub es: Vec<f64>,
    pub level: Vec<f64>,
    pub ratio: Vec<f64>,
    pub max_ratio: f64,
    pub argmax_time: f64,
    pub inf_log: f64,
    pub argmin_log_time: f64,
    pub log_bound: f64,
    pub satisfied_ratio: bool,
    pub satisfied_log: bool,
}

impl RiskProfile {
    pub fn satisfied(&self) -> bool {
        self.satisfied_ratio && self.satisfied_log
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "var", "es", "level", "ratio"])?;
        for i in 0..self.times.len() {
            out.serialize((self.times[i], self.var[i], self.es[i], self.level[i], self.ratio[i]))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Evaluates the risk curves on `grid` and the constraint on `grid` plus the
/// exact minimisers of the log functional.
pub fn constraint_profile_bound(c: &Cumulants, spec: &RiskSpec, x: f64, grid: &[f64]) -> Result<RiskProfile> {
    let q = spec.quantile()?;
    let ev = RiskEvaluator::new(c, q);
    let mut times: Vec<f64> = grid.to_vec();
    times.extend(c.knots().iter().copied());
    times.retain(|t| *t >= 0.0 && *t <= c.horizon());
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut var = Vec::with_capacity(times.len());
    let mut es = Vec::with_capacity(times.len());
    let mut level = Vec::with_capacity(times.len());
    let mut ratio = Vec::with_capacity(times.len());
    let (mut max_ratio, mut argmax_time) = (f64::NEG_INFINITY, 0.0);
    for &t in &times {
        let v = ev.value_at_risk(x, t);
        let e = ev.expected_shortfall(x, t);
        let l = spec.zeta * x * c.r_cum(t).exp();
        let rt = match spec.kind {
            RiskKind::Var => v,
            RiskKind::Es => e,
        } / l;
        if rt > max_ratio {
            max_ratio = rt;
            argmax_time = t;
        }
        var.push(v);
        es.push(e);
        level.push(l);
        ratio.push(rt);
    }
    let (inf_log, argmin_log_time) = ev.inf_log_functional(spec.kind, grid.len().max(2));
    // ratio at the exact minimiser, which the grid may have missed
    let exact_ratio = -inf_log.exp_m1() / spec.zeta;
    if exact_ratio > max_ratio {
        max_ratio = exact_ratio;
        argmax_time = argmin_log_time;
    }
    let log_bound = spec.log_bound();
    Ok(RiskProfile {
        kind: spec.kind,
        alpha: spec.alpha,
        zeta: spec.zeta,
        times,
        var,
        es,
        level,
        ratio,
        max_ratio,
        argmax_time,
        inf_log,
        argmin_log_time,
        log_bound,
        satisfied_ratio: max_ratio <= 1.0 + SATURATION_TOL,
        satisfied_log: inf_log >= (-spec.zeta * (1.0 + SATURATION_TOL)).ln_1p(),
    })
}

fn bind(market: &Market, strategy: &DeterministicStrategy) -> Result<Cumulants> {
    strategy.bind(market)
}

fn check_x(x: f64) -> Result<()> {
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!("initial wealth must be positive, got {x}")));
    }
    Ok(())
}

pub fn quantile_lambda(market: &Market, strategy: &DeterministicStrategy, alpha: f64, x: f64, t: f64) -> Result<f64> {
    check_x(x)?;
    market.check_time(t)?;
    let c = bind(market, strategy)?;
    Ok(RiskEvaluator::new(&c, normal_quantile(alpha)?).lambda(x, t))
}

pub fn value_at_risk(market: &Market, strategy: &DeterministicStrategy, alpha: f64, x: f64, t: f64) -> Result<f64> {
    check_x(x)?;
    market.check_time(t)?;
    let c = bind(market, strategy)?;
    Ok(RiskEvaluator::new(&c, normal_quantile(alpha)?).value_at_risk(x, t))
}

pub fn expected_shortfall(market: &Market, strategy: &DeterministicStrategy, alpha: f64, x: f64, t: f64) -> Result<f64> {
    check_x(x)?;
    market.check_time(t)?;
    let c = bind(market, strategy)?;
    Ok(RiskEvaluator::new(&c, normal_quantile(alpha)?).expected_shortfall(x, t))
}

pub fn constraint_profile(
    market: &Market,
    strategy: &DeterministicStrategy,
    spec: &RiskSpec,
    x: f64,
    grid: &[f64],
) -> Result<RiskProfile> {
    check_x(x)?;
    let c = bind(market, strategy)?;
    constraint_profile_bound(&c, spec, x, grid)
}

/// `L_t` or `L*_t` at one time.
pub fn log_risk_functional(market: &Market, strategy: &DeterministicStrategy, spec: &RiskSpec, t: f64) -> Result<f64> {
    market.check_time(t)?;
    let c = bind(market, strategy)?;
    Ok(RiskEvaluator::new(&c, spec.quantile()?).log_functional(spec.kind, t))
}
