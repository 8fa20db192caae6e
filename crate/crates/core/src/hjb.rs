//! Checks that the candidate value function of the unconstrained power-utility
//! problem solves its HJB equation, and that the feedback controls attain the
//! Hamiltonian supremum.
//!
//! With `z = A₁/γ₁ g^{1-q₁} + A₂/γ₂ g^{1-q₂}` and `g = g(t, x)`:
//! `z_x = g`, `z_xx = -g/p`, `z_t = Σ Ȧ_i g^{1-q_i} / (q_i γ_i)`, and the
//! equation reads
//! `z_t + r x z_x + z_x² |θ|² / (2|z_xx|) + (1/q₁)(γ₁/z_x)^{q₁-1} = 0`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::Market;
use crate::unconstrained::{HaraCoefficients, HaraFeedback, UtilityParams};

/// Nodes closer than this (in years) to a coefficient breakpoint are treated
/// as touching it.
pub const BREAKPOINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct HjbGrid {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    /// Nodes dropped because they touched a breakpoint.
    pub excluded_t: Vec<f64>,
}

impl HjbGrid {
    /// `nt` cell-centred times on `[0, T)` and `nx` log-spaced wealths on
    /// `[x_lo, x_hi]`; times touching a breakpoint are dropped and recorded.
    pub fn off_breakpoints(market: &Market, nt: usize, nx: usize, x_lo: f64, x_hi: f64) -> Result<Self> {
        if !(x_lo > 0.0 && x_hi >= x_lo) || nt == 0 || nx == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid needs nt, nx > 0 and 0 < x_lo <= x_hi, got {nt}, {nx}, [{x_lo}, {x_hi}]"
            )));
        }
        let horizon = market.horizon();
        let (mut t, mut excluded_t) = (vec![], vec![]);
        for k in 0..nt {
            let s = horizon * (k as f64 + 0.5) / nt as f64;
            if touches(market, s) {
                excluded_t.push(s);
            } else {
                t.push(s);
            }
        }
        let x = if nx == 1 {
            vec![x_lo]
        } else {
            (0..nx)
                .map(|i| (x_lo.ln() + (x_hi / x_lo).ln() * i as f64 / (nx - 1) as f64).exp())
                .collect()
        };
        Ok(Self { t, x, excluded_t })
    }

    /// A user grid; fails if any time touches a breakpoint.
    pub fn new(market: &Market, t: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        for &s in &t {
            market.check_time(s)?;
            if touches(market, s) {
                return Err(Error::GridTouchesBreakpoint { t: s });
            }
        }
        if let Some(bad) = x.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidParameter(format!("wealth node {bad} must be positive")));
        }
        Ok(Self {
            t,
            x,
            excluded_t: vec![],
        })
    }
}

/// Whether `t` coincides with a breakpoint. The horizon counts: the equation
/// holds on `[0, T)` and the terminal row is checked separately.
fn touches(market: &Market, t: f64) -> bool {
    market.knots()[1..].iter().any(|k| (k - t).abs() <= BREAKPOINT_TOL)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HjbTolerances {
    /// Largest residual relative to the sum of absolute term magnitudes.
    pub residual: f64,
    /// Largest `|z(T,x) - x^{γ₂}|` relative to `x^{γ₂}`.
    pub terminal: f64,
    /// Largest Hamiltonian excess of a probe, relative to the term scale.
    pub hamiltonian: f64,
}

impl Default for HjbTolerances {
    fn default() -> Self {
        Self {
            residual: 1e-7,
            terminal: 1e-12,
            hamiltonian: 1e-10,
        }
    }
}

/// The four terms of the equation at one node.
#[derive(Debug, Clone, Copy)]
pub struct HjbTerms {
    pub z: f64,
    pub z_t: f64,
    pub z_x: f64,
    pub z_xx: f64,
    pub drift: f64,
    pub risk: f64,
    pub consumption: f64,
}

impl HjbTerms {
    pub fn residual(&self) -> f64 {
        self.z_t + self.drift + self.risk + self.consumption
    }

    pub fn scale(&self) -> f64 {
        self.z_t.abs() + self.drift.abs() + self.risk.abs() + self.consumption.abs()
    }
}

/// Analytic `z` and its derivatives at `(t, x)`.
pub fn hjb_terms(c: &HaraCoefficients, t: f64, x: f64) -> Result<HjbTerms> {
    let g = c.g(t, x)?;
    let (s1, s2) = c.shares(t, g);
    let p = c.q1() * s1 + c.q2() * s2;
    let lg = g.ln();
    // Ȧ_i g^{1-q_i} = (Ȧ_i / A_i) A_i g^{-q_i} g
    let a1_term = if s1 > 0.0 {
        c.a1_dot(t) / c.a1(t) * s1 * g / (c.q1() * c.gamma1())
    } else {
        0.0
    };
    let a2_term = c.a2_dot(t) / c.a2(t) * s2 * g / (c.q2() * c.gamma2());
    let z = g * (s1 / c.gamma1() + s2 / c.gamma2());
    let z_xx = -g / p;
    let th2 = c.theta_sq_at(t);
    Ok(HjbTerms {
        z,
        z_t: a1_term + a2_term,
        z_x: g,
        z_xx,
        drift: c.rate_at(t) * x * g,
        risk: 0.5 * g * p * th2,
        consumption: ((c.q1() - 1.0) * (c.gamma1().ln() - lg)).exp() / c.q1(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualRow {
    pub t: f64,
    pub x: f64,
    pub residual: f64,
    pub relative: f64,
}

/// Central differences of `z` against the analytic derivatives at one node,
/// for steps `h` and `h/2`; observed orders near 2 confirm the derivatives.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FiniteDifferenceCheck {
    pub t: f64,
    pub x: f64,
    pub h: f64,
    pub err_t: [f64; 2],
    pub err_x: [f64; 2],
    pub err_xx: [f64; 2],
    pub order_t: f64,
    pub order_x: f64,
    pub order_xx: f64,
}

pub fn finite_difference_check(c: &HaraCoefficients, t: f64, x: f64, h: f64) -> Result<FiniteDifferenceCheck> {
    let an = hjb_terms(c, t, x)?;
    let z = |s: f64, w: f64| c.value_function(s, w);
    let mut err_t = [0.0; 2];
    let mut err_x = [0.0; 2];
    let mut err_xx = [0.0; 2];
    for (i, hh) in [h, 0.5 * h].into_iter().enumerate() {
        let ht = hh * t.max(c.horizon() - t).min(1.0);
        let hx = hh * x;
        let zt = (z(t + ht, x)? - z(t - ht, x)?) / (2.0 * ht);
        let (zp, z0, zm) = (z(t, x + hx)?, z(t, x)?, z(t, x - hx)?);
        err_t[i] = (zt - an.z_t).abs();
        err_x[i] = ((zp - zm) / (2.0 * hx) - an.z_x).abs();
        err_xx[i] = ((zp - 2.0 * z0 + zm) / (hx * hx) - an.z_xx).abs();
    }
    let order = |e: [f64; 2]| (e[0] / e[1]).log2();
    Ok(FiniteDifferenceCheck {
        t,
        x,
        h,
        err_t,
        err_x,
        err_xx,
        order_t: order(err_t),
        order_x: order(err_x),
        order_xx: order(err_xx),
    })
}

/// `H₀ = c^{γ₁} + z₁ (r x + x y'θ - c) + ½ z₂ x² |y|²`.
fn h0(c: &HaraCoefficients, t: f64, x: f64, z1: f64, z2: f64, y: &[f64], cons: f64) -> f64 {
    let th = c.theta_at(t);
    let y_theta: f64 = y.iter().zip(th).map(|(a, b)| a * b).sum();
    let y2: f64 = y.iter().map(|a| a * a).sum();
    cons.powf(c.gamma1()) + z1 * (c.rate_at(t) * x + x * y_theta - cons) + 0.5 * z2 * x * x * y2
}

#[derive(Debug, Clone, Serialize)]
pub struct HjbReport {
    pub gamma1: f64,
    pub gamma2: f64,
    pub grid: HjbGrid,
    #[serde(skip)]
    pub residuals: Vec<ResidualRow>,
    pub max_abs_residual: f64,
    pub max_rel_residual: f64,
    pub terminal_error: f64,
    /// `min (H - H₀(ϑ*))` over nodes, relative to the term scale; the
    /// supremum must dominate, so this is `≥ -1e-12` up to rounding.
    pub hamiltonian_gap: f64,
    /// Largest `H₀(probe) - H₀(ϑ*)` over random probes, relative.
    pub probe_excess: f64,
    pub n_probes: usize,
    /// Largest relative mismatch between the solver's feedback law and the
    /// argmax formulas.
    pub control_mismatch: f64,
    pub finite_differences: Vec<FiniteDifferenceCheck>,
    pub tolerances: HjbTolerances,
    pub passed: bool,
}

impl HjbReport {
    /// Residual table `t, x, residual, relative`.
    pub fn write_residual_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "x", "residual", "relative"])?;
        for r in &self.residuals {
            out.serialize((r.t, r.x, r.residual, r.relative))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Residual of the HJB equation on the grid and terminal error on the
/// wealth nodes.
pub fn hjb_residual(market: &Market, utility: UtilityParams, grid: &HjbGrid) -> Result<HjbReport> {
    let c = HaraCoefficients::new(market, utility)?;
    verify(market, c, grid, 0, 0, &HjbTolerances::default())
}

/// Probes the Hamiltonian at every node with `n_probes` random controls.
pub fn hamiltonian_argmax_check(market: &Market, utility: UtilityParams, grid: &HjbGrid, n_probes: usize) -> Result<HjbReport> {
    let c = HaraCoefficients::new(market, utility)?;
    verify(market, c, grid, n_probes, 0, &HjbTolerances::default())
}

/// Full verification with explicit coefficients (so a faulty candidate can
/// be exercised).
pub fn verify(
    market: &Market,
    coefficients: HaraCoefficients,
    grid: &HjbGrid,
    n_probes: usize,
    seed: u64,
    tolerances: &HjbTolerances,
) -> Result<HjbReport> {
    for &t in &grid.t {
        if touches(market, t) {
            return Err(Error::GridTouchesBreakpoint { t });
        }
        market.check_time(t)?;
    }
    let c = &coefficients;
    let feedback = HaraFeedback::new(coefficients.clone(), grid.x.first().copied().unwrap_or(1.0))?;
    let nodes: Vec<(usize, f64, f64)> = grid
        .t
        .iter()
        .flat_map(|&t| grid.x.iter().map(move |&x| (t, x)))
        .enumerate()
        .map(|(i, (t, x))| (i, t, x))
        .collect();

    struct NodeOut {
        row: ResidualRow,
        gap: f64,
        excess: f64,
        mismatch: f64,
    }
    let outs: Vec<NodeOut> = nodes
        .par_iter()
        .map(|&(i, t, x)| -> Result<NodeOut> {
            let terms = hjb_terms(c, t, x)?;
            let res = terms.residual();
            let scale = terms.scale();
            let (z1, z2) = (terms.z_x, terms.z_xx);
            // Argmax of H₀ and the supremum in closed form.
            let th = c.theta_at(t);
            let y_star: Vec<f64> = th.iter().map(|v| z1 / (x * z2.abs()) * v).collect();
            let c_star = (c.gamma1() / z1).powf(c.q1());
            let h_sup = terms.drift + terms.risk + terms.consumption;
            let h_star = h0(c, t, x, z1, z2, &y_star, c_star);
            let gap = (h_sup - h_star) / scale;
            // The solver's feedback law at this node.
            let y_fb = feedback.exposure(market, t, x);
            let c_fb = feedback.consumption(t, x);
            let ynorm = y_star.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ydiff = y_fb.iter().zip(&y_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let mismatch = (if ynorm > 0.0 { ydiff / ynorm } else { ydiff }).max((c_fb - c_star).abs() / c_star);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut excess = f64::NEG_INFINITY;
            for k in 0..n_probes {
                let (y, cons): (Vec<f64>, f64) = match k {
                    0 => (y_star.clone(), c_star),
                    1 => (y_star.iter().map(|v| 2.0 * v).collect(), c_star),
                    2 => (y_star.clone(), 0.0),
                    _ => (
                        y_star
                            .iter()
                            .map(|v| v * rng.random_range(-1.0..3.0) + rng.random_range(-0.5..0.5))
                            .collect(),
                        c_star * rng.random_range(0.0..3.0),
                    ),
                };
                excess = excess.max((h0(c, t, x, z1, z2, &y, cons) - h_star) / scale);
            }
            Ok(NodeOut {
                row: ResidualRow {
                    t,
                    x,
                    residual: res,
                    relative: res / scale,
                },
                gap,
                excess,
                mismatch,
            })
        })
        .collect::<Result<_>>()?;

    let horizon = market.horizon();
    let mut terminal_error = 0.0f64;
    for &x in &grid.x {
        let z = c.value_function(horizon, x)?;
        let target = x.powf(c.gamma2());
        terminal_error = terminal_error.max((z - target).abs() / target);
    }

    let mut finite_differences = vec![];
    if let (Some(&t), Some(&x)) = (grid.t.get(grid.t.len() / 2), grid.x.get(grid.x.len() / 2)) {
        // Keep the stencil inside the continuity interval around t.
        let dist = market
            .knots()
            .iter()
            .map(|k| (k - t).abs())
            .fold(f64::INFINITY, f64::min);
        let h = (0.25 * dist / t.max(horizon - t).min(1.0)).min(1e-2);
        finite_differences.push(finite_difference_check(c, t, x, h)?);
    }

    let residuals: Vec<ResidualRow> = outs.iter().map(|o| o.row).collect();
    let max_abs_residual = residuals.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
    let max_rel_residual = residuals.iter().map(|r| r.relative.abs()).fold(0.0, f64::max);
    let hamiltonian_gap = outs.iter().map(|o| o.gap).fold(f64::INFINITY, f64::min);
    let probe_excess = if n_probes > 0 {
        outs.iter().map(|o| o.excess).fold(f64::NEG_INFINITY, f64::max)
    } else {
        0.0
    };
    let control_mismatch = outs.iter().map(|o| o.mismatch).fold(0.0, f64::max);
    let passed = max_rel_residual <= tolerances.residual
        && terminal_error <= tolerances.terminal
        && hamiltonian_gap >= -tolerances.hamiltonian
        && probe_excess <= tolerances.hamiltonian
        && control_mismatch <= tolerances.hamiltonian;
    Ok(HjbReport {
        gamma1: c.gamma1(),
        gamma2: c.gamma2(),
        grid: grid.clone(),
        residuals,
        max_abs_residual,
        max_rel_residual,
        terminal_error,
        hamiltonian_gap: if hamiltonian_gap.is_finite() { hamiltonian_gap } else { 0.0 },
        probe_excess,
        n_probes,
        control_mismatch,
        finite_differences,
        tolerances: *tolerances,
        passed,
    })
}

/// Sample means of `sup_k z(t_k, X_{t_k})^δ` over the first half of the
/// paths and over all of them. A finite, stable pair is a numeric witness
/// for the moment condition used by the verification argument.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentWitness {
    pub delta: f64,
    pub half: f64,
    pub full: f64,
    pub relative_change: f64,
}

pub fn moment_witness(
    coefficients: &HaraCoefficients,
    ensemble: &crate::monte_carlo::PathEnsemble,
    delta: f64,
) -> Result<MomentWitness> {
    let times = ensemble.times();
    let n = ensemble.n_paths();
    let sups: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut best = 0.0f64;
            for (k, &t) in times.iter().enumerate() {
                best = best.max(coefficients.value_function(t, ensemble.wealth(p, k))?.powf(delta));
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let half = mean(&sups[..(n / 2).max(1)]);
    let full = mean(&sups);
    Ok(MomentWitness {
        delta,
        half,
        full,
        relative_change: (full - half).abs() / full,
    })
}
