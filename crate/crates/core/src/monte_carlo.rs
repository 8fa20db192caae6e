//! Exact-law simulation of optimal and deterministic wealth processes.
//!
//! Both laws are exponentials of a scalar Gaussian process with independent
//! increments whose means and variances are known in closed form, so paths
//! are sampled on the monitoring grid with no discretisation bias.
//!
//! Every path (or antithetic pair) owns a ChaCha stream indexed by its id,
//! so ensembles are bit-identical for a given seed regardless of the thread
//! count.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::Market;
use crate::path::Ramp;
use crate::risk::{RiskKind, RiskSpec};
use crate::strategy::{Cumulants, DeterministicStrategy};
use crate::unconstrained::{HaraCoefficients, HaraFeedback, UtilityParams};

/// Below this many tail samples (`n α`) empirical tail estimates are refused.
pub const MIN_TAIL_SAMPLES: f64 = 100.0;

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub n_paths: usize,
    /// Monitoring times; 0, the horizon and all breakpoints are added.
    pub times: Vec<f64>,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimConfig {
    /// `n_steps` equal steps on `[0, T]`.
    pub fn uniform(horizon: f64, n_steps: usize, n_paths: usize, seed: u64) -> Self {
        let n = n_steps.max(1);
        Self {
            n_paths,
            times: (0..=n).map(|i| horizon * (i as f64 / n as f64)).collect(),
            seed,
            antithetic: false,
        }
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    fn grid(&self, horizon: f64, knots: &[f64]) -> Result<Vec<f64>> {
        if self.n_paths < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 paths, got {}", self.n_paths)));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "antithetic sampling needs an even number of paths, got {}",
                self.n_paths
            )));
        }
        if let Some(t) = self.times.iter().find(|t| !(**t >= 0.0 && **t <= horizon)) {
            return Err(Error::TimeOutOfRange { t: *t, horizon });
        }
        let mut grid = self.times.clone();
        grid.push(0.0);
        grid.push(horizon);
        grid.extend_from_slice(knots);
        grid.sort_by(f64::total_cmp);
        // Knots come from tick arithmetic; merge near-duplicates.
        grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * horizon.max(1.0));
        Ok(grid)
    }
}

/// What the stored state means.
#[derive(Debug, Clone)]
pub enum EnsembleKind {
    /// State is `ln(X_t / x)` under a deterministic strategy.
    Deterministic(Arc<Cumulants>),
    /// State is the Gaussian driver `ξ_t` of the feedback optimum.
    Feedback(Arc<HaraFeedback>),
}

/// Simulated paths, one row of states per path.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    kind: EnsembleKind,
    x0: f64,
    times: Vec<f64>,
    state: Vec<f64>,
    n_paths: usize,
    seed: u64,
    antithetic: bool,
}

/// Samples a path of a Gaussian process with independent increments given
/// its means and variances on the grid; `sign` flips the normals.
fn fill_path(row: &mut [f64], means: &[f64], vars: &[f64], normals: &[f64], sign: f64) {
    row[0] = means[0] + sign * normals[0] * vars[0].sqrt();
    for k in 1..row.len() {
        let dv = (vars[k] - vars[k - 1]).max(0.0);
        row[k] = row[k - 1] + (means[k] - means[k - 1]) + sign * normals[k] * dv.sqrt();
    }
}

fn simulate_gaussian(means: &[f64], vars: &[f64], config: &SimConfig) -> Vec<f64> {
    let m = means.len();
    let mut state = vec![0.0; config.n_paths * m];
    let draw = |stream: u64| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        (0..m).map(|_| StandardNormal.sample(&mut rng)).collect()
    };
    if config.antithetic {
        state.par_chunks_mut(2 * m).enumerate().for_each(|(pair, rows)| {
            let z = draw(pair as u64);
            let (a, b) = rows.split_at_mut(m);
            fill_path(a, means, vars, &z, 1.0);
            fill_path(b, means, vars, &z, -1.0);
        });
    } else {
        state.par_chunks_mut(m).enumerate().for_each(|(path, row)| {
            let z = draw(path as u64);
            fill_path(row, means, vars, &z, 1.0);
        });
    }
    state
}

/// Exact sampling of `X_t = x exp(R - V + (y,θ) - ½‖y‖² + ∫y'dW)`.
pub fn simulate_deterministic(
    market: &Market,
    strategy: &DeterministicStrategy,
    x: f64,
    config: &SimConfig,
) -> Result<PathEnsemble> {
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!("initial wealth must be positive, got {x}")));
    }
    let c = strategy.bind(market)?;
    let times = config.grid(market.horizon(), c.knots())?;
    let means: Vec<f64> = times.iter().map(|&t| c.log_mean(t)).collect();
    let vars: Vec<f64> = times.iter().map(|&t| c.log_var(t)).collect();
    let state = simulate_gaussian(&means, &vars, config);
    Ok(PathEnsemble {
        kind: EnsembleKind::Deterministic(Arc::new(c)),
        x0: x,
        times,
        state,
        n_paths: config.n_paths,
        seed: config.seed,
        antithetic: config.antithetic,
    })
}

/// Exact sampling of the driver `ξ_t`; wealth follows as
/// `A₁(t) g₀^{-q₁} e^{-q₁ξ_t} + A₂(t) g₀^{-q₂} e^{-q₂ξ_t}`.
pub fn simulate_hara_feedback(
    market: &Market,
    utility: UtilityParams,
    x: f64,
    config: &SimConfig,
) -> Result<PathEnsemble> {
    let feedback = HaraFeedback::new(HaraCoefficients::new(market, utility)?, x)?;
    simulate_feedback(market, &feedback, config)
}

pub fn simulate_feedback(market: &Market, feedback: &HaraFeedback, config: &SimConfig) -> Result<PathEnsemble> {
    let times = config.grid(market.horizon(), market.knots())?;
    let (means, vars): (Vec<f64>, Vec<f64>) = times.iter().map(|&t| feedback.driver_moments(t)).unzip();
    let state = simulate_gaussian(&means, &vars, config);
    Ok(PathEnsemble {
        kind: EnsembleKind::Feedback(Arc::new(feedback.clone())),
        x0: feedback.x0(),
        times,
        state,
        n_paths: config.n_paths,
        seed: config.seed,
        antithetic: config.antithetic,
    })
}

/// Sample mean with its standard error. For the mean, the delete-one
/// jackknife standard error coincides with `s/√n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = compensated_sum(values.iter().copied()) / n as f64;
        let var = if n > 1 {
            compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
        }
    }

    /// Whether `target` lies within `k` standard errors, with an absolute
    /// floor for degenerate (zero-variance) samples.
    pub fn covers(&self, target: f64, k: f64, floor: f64) -> bool {
        (self.mean - target).abs() <= (k * self.std_error).max(floor)
    }
}

impl PathEnsemble {
    pub fn kind(&self) -> &EnsembleKind {
        &self.kind
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn antithetic(&self) -> bool {
        self.antithetic
    }

    pub fn state(&self, path: usize, k: usize) -> f64 {
        self.state[path * self.times.len() + k]
    }

    pub fn wealth(&self, path: usize, k: usize) -> f64 {
        let s = self.state(path, k);
        match &self.kind {
            EnsembleKind::Deterministic(_) => self.x0 * s.exp(),
            EnsembleKind::Feedback(f) => f.wealth(self.times[k], s),
        }
    }

    /// Consumption rate `c_t` (currency per unit time).
    pub fn consumption(&self, path: usize, k: usize) -> f64 {
        let t = self.times[k];
        match &self.kind {
            EnsembleKind::Deterministic(c) => c.v_rate(t) * self.wealth(path, k),
            EnsembleKind::Feedback(f) => {
                let c = f.coefficients();
                (c.gamma1() / (f.g0() * self.state(path, k).exp())).powf(c.q1())
            }
        }
    }

    /// Wealth of every path at grid index `k`.
    pub fn wealth_column(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths).into_par_iter().map(|p| self.wealth(p, k)).collect()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.wealth_column(self.times.len() - 1)
    }

    /// Per-path values grouped into independent samples: antithetic pairs
    /// are averaged.
    fn independent(&self, per_path: Vec<f64>) -> Vec<f64> {
        if self.antithetic {
            per_path.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect()
        } else {
            per_path
        }
    }

    pub fn mean_of(&self, per_path: Vec<f64>) -> Estimate {
        Estimate::from_samples(&self.independent(per_path))
    }

    pub fn terminal_mean(&self) -> Estimate {
        self.mean_of(self.terminal())
    }

    /// Monte Carlo estimate of `E(∫_0^T c_t^{γ₁} dt + X_T^{γ₂})`.
    ///
    /// The consumption integral between grid times is replaced by its
    /// conditional expectation given the state at the left end, which is
    /// known in closed form for both laws; the estimator stays unbiased.
    pub fn estimate_cost(&self, utility: UtilityParams) -> Result<Estimate> {
        utility.validate()?;
        let (g1, g2) = (utility.gamma1, utility.gamma2);
        let m = self.times.len();
        let per_path: Vec<f64> = match &self.kind {
            EnsembleKind::Deterministic(c) => {
                let weights: Vec<f64> = (0..m - 1)
                    .map(|k| {
                        let (a, b) = (self.times[k], self.times[k + 1]);
                        c.consumption_integral(g1, a, b, c.power_exponent(g1, a))
                    })
                    .collect();
                let x = self.x0;
                (0..self.n_paths)
                    .into_par_iter()
                    .map(|p| {
                        let row = &self.state[p * m..(p + 1) * m];
                        let cons: f64 = weights
                            .iter()
                            .zip(row)
                            .filter(|(w, _)| **w > 0.0)
                            .map(|(w, s)| w * (g1 * (x.ln() + s)).exp())
                            .sum();
                        cons + (g2 * (x.ln() + row[m - 1])).exp()
                    })
                    .collect()
            }
            EnsembleKind::Feedback(f) => {
                let co = f.coefficients();
                if (co.gamma1() - g1).abs() > 1e-15 || (co.gamma2() - g2).abs() > 1e-15 {
                    return Err(Error::InvalidParameter(format!(
                        "ensemble simulated for ({}, {}) but cost requested for ({g1}, {g2})",
                        co.gamma1(),
                        co.gamma2()
                    )));
                }
                // c^{γ₁} = γ₁^{a} g₀^{-a} e^{-aξ} with a = q₁γ₁, and
                // E e^{-a(ξ_u - ξ_t)} = exp(a(ΔR + ½Δ‖θ‖²) + a²/2 Δ‖θ‖²).
                let a = co.q1() * g1;
                let expo: Ramp = co.cum_r().combine(a, co.cum_theta_sq(), 0.5 * (a + a * a));
                let scale = a * (g1.ln() - f.g0().ln());
                let weights: Vec<f64> = (0..m - 1)
                    .map(|k| {
                        let (lo, hi) = (self.times[k], self.times[k + 1]);
                        expo.exp_integral_shifted(lo, hi, expo.eval(lo))
                    })
                    .collect();
                let t_end = self.times[m - 1];
                (0..self.n_paths)
                    .into_par_iter()
                    .map(|p| {
                        let row = &self.state[p * m..(p + 1) * m];
                        let cons: f64 = weights.iter().zip(row).map(|(w, xi)| w * (scale - a * xi).exp()).sum();
                        cons + f.wealth(t_end, row[m - 1]).powf(g2)
                    })
                    .collect()
            }
        };
        Ok(self.mean_of(per_path))
    }

    /// Empirical risk curves on the monitoring grid.
    pub fn empirical_risk_curve(&self, market: &Market, spec: &RiskSpec) -> Result<EmpiricalRiskProfile> {
        spec.validate()?;
        if (self.n_paths as f64) * spec.alpha < MIN_TAIL_SAMPLES {
            return Err(Error::InsufficientPaths {
                n_paths: self.n_paths,
                alpha: spec.alpha,
            });
        }
        let x = self.x0;
        let rows: Vec<EmpiricalRiskRow> = (0..self.times.len())
            .map(|k| {
                let t = self.times[k];
                let bond = x * market.cum_r().eval(t).exp();
                let mut col = self.wealth_column(k);
                col.par_sort_unstable_by(f64::total_cmp);
                let tail = tail_stats(&col, spec.alpha, 4.0);
                let level = spec.zeta * bond;
                let (risk, risk_se) = match spec.kind {
                    RiskKind::Var => (bond - tail.quantile, tail.quantile_se),
                    RiskKind::Es => (bond - tail.tail_mean, tail.tail_mean_se),
                };
                EmpiricalRiskRow {
                    t,
                    var: bond - tail.quantile,
                    var_lo: bond - tail.quantile_hi,
                    var_hi: bond - tail.quantile_lo,
                    var_se: tail.quantile_se,
                    es: bond - tail.tail_mean,
                    es_se: tail.tail_mean_se,
                    level,
                    ratio: risk / level,
                    ratio_se: risk_se / level,
                }
            })
            .collect();
        let (max_ratio, max_ratio_se, argmax_time) = rows
            .iter()
            .map(|r| (r.ratio, r.ratio_se, r.t))
            .fold((f64::NEG_INFINITY, 0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
        Ok(EmpiricalRiskProfile {
            kind: spec.kind,
            alpha: spec.alpha,
            zeta: spec.zeta,
            n_paths: self.n_paths,
            rows,
            max_ratio,
            max_ratio_se,
            argmax_time,
        })
    }

    /// Long-format CSV `path_id, t, X, c` for the first `max_paths` paths.
    pub fn write_csv<W: Write>(&self, w: W, max_paths: usize) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["path_id", "t", "X", "c"])?;
        for p in 0..self.n_paths.min(max_paths) {
            for k in 0..self.times.len() {
                out.serialize((p, self.times[k], self.wealth(p, k), self.consumption(p, k)))?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self, utility: Option<UtilityParams>) -> Result<EnsembleSummary> {
        Ok(EnsembleSummary {
            n_paths: self.n_paths,
            seed: self.seed,
            antithetic: self.antithetic,
            law: match self.kind {
                EnsembleKind::Deterministic(_) => "deterministic",
                EnsembleKind::Feedback(_) => "feedback",
            },
            x0: self.x0,
            horizon: *self.times.last().unwrap(),
            n_times: self.times.len(),
            terminal_mean: self.terminal_mean(),
            cost: utility.map(|u| self.estimate_cost(u)).transpose()?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub law: &'static str,
    pub x0: f64,
    pub horizon: f64,
    pub n_times: usize,
    pub terminal_mean: Estimate,
    pub cost: Option<Estimate>,
}

/// Neumaier summation; plain summation of 10⁶ equal terms drifts by ~1e-11
/// relative.
pub fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Distribution-free confidence interval for the `p`-quantile from order
/// statistics, at `z` normal standard deviations.
pub fn quantile_ci(sorted: &[f64], p: f64, z: f64) -> (f64, f64) {
    let n = sorted.len() as f64;
    let half = z * (n * p * (1.0 - p)).sqrt();
    let lo = ((n * p - half).floor().max(1.0) as usize).min(sorted.len()) - 1;
    let hi = ((n * p + half).ceil().max(1.0) as usize).min(sorted.len()) - 1;
    (sorted[lo], sorted[hi])
}

/// Quantile, its order-statistic interval, and the mean below it.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailStats {
    pub quantile: f64,
    pub quantile_lo: f64,
    pub quantile_hi: f64,
    /// Interval half-width divided by `z`.
    pub quantile_se: f64,
    pub tail_mean: f64,
    pub tail_mean_se: f64,
}

/// Tail statistics of sorted data at level `alpha`. The tail mean averages
/// the `round(nα)` smallest values; its standard error is
/// `sd((λ - X)⁺) / (α √n)`.
pub fn tail_stats(sorted: &[f64], alpha: f64, z: f64) -> TailStats {
    let n = sorted.len();
    let q = quantile_type7(sorted, alpha);
    let (lo, hi) = quantile_ci(sorted, alpha, z);
    let k = ((n as f64 * alpha).round() as usize).clamp(1, n);
    let tail_mean = sorted[..k].iter().sum::<f64>() / k as f64;
    let shortfall: Vec<f64> = sorted.iter().map(|x| (q - x).max(0.0)).collect();
    let sd = Estimate::from_samples(&shortfall).std_error * (n as f64).sqrt();
    TailStats {
        quantile: q,
        quantile_lo: lo,
        quantile_hi: hi,
        quantile_se: (hi - lo) / (2.0 * z),
        tail_mean,
        tail_mean_se: sd / (alpha * (n as f64).sqrt()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalRiskRow {
    pub t: f64,
    pub var: f64,
    pub var_lo: f64,
    pub var_hi: f64,
    pub var_se: f64,
    pub es: f64,
    pub es_se: f64,
    pub level: f64,
    pub ratio: f64,
    pub ratio_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalRiskProfile {
    pub kind: RiskKind,
    pub alpha: f64,
    pub zeta: f64,
    pub n_paths: usize,
    pub rows: Vec<EmpiricalRiskRow>,
    pub max_ratio: f64,
    pub max_ratio_se: f64,
    pub argmax_time: f64,
}

impl EmpiricalRiskProfile {
    /// Whether every ratio is at most 1 within `k` standard errors.
    pub fn within_bound(&self, k: f64) -> bool {
        self.rows.iter().all(|r| r.ratio - k * r.ratio_se <= 1.0 + 1e-12)
    }
}

/// Euler scheme for the optimal wealth SDE `dX = a*(t,X)dt + b*(t,X)'dW`;
/// returns `X_T` per path. Only a cross-check of the exact law.
pub fn euler_feedback_terminal(
    market: &Market,
    feedback: &HaraFeedback,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("step {dt}")));
    }
    let horizon = market.horizon();
    let n_steps = (horizon / dt).round().max(1.0) as usize;
    let h = horizon / n_steps as f64;
    let d = market.dim();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut x = feedback.x0();
            for k in 0..n_steps {
                let t = k as f64 * h;
                let (a, b) = feedback.sde_coefficients(t, x)?;
                let mut noise = 0.0;
                for bi in b.iter().take(d) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    noise += bi * h.sqrt() * z;
                }
                x += a * h + noise;
                if !(x > 0.0) {
                    return Err(Error::ConvergenceFailure {
                        what: "Euler scheme kept wealth positive",
                        iterations: k,
                    });
                }
            }
            Ok(x)
        })
        .collect()
}

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > λ)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::StepPath;
    use crate::risk::RiskEvaluator;
    use crate::strategy::Consumption;

    fn standard() -> Market {
        Market::constant(0.0, vec![0.1], vec![vec![0.2]], 1.0).unwrap()
    }

    #[test]
    fn bond_only_paths_are_deterministic() {
        let m = Market::constant(0.04, vec![0.1], vec![vec![0.2]], 2.0).unwrap();
        let s = DeterministicStrategy::bond_only(1, 2.0).unwrap();
        let e = simulate_deterministic(&m, &s, 1.5, &SimConfig::uniform(2.0, 10, 50, 1)).unwrap();
        for p in 0..50 {
            for (k, &t) in e.times().iter().enumerate() {
                assert!((e.wealth(p, k) - 1.5 * (0.04 * t).exp()).abs() < 1e-14);
            }
        }
        let u = UtilityParams::new(0.5, 0.5).unwrap();
        assert!((e.estimate_cost(u).unwrap().mean - (1.5 * 0.08f64.exp()).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn seed_determinism_across_thread_counts() {
        let m = standard();
        let s = DeterministicStrategy::theta_direction(&m, 0.3, Consumption::Piecewise(StepPath::constant(0.1, 1.0).unwrap())).unwrap();
        let cfg = SimConfig::uniform(1.0, 5, 1000, 42);
        let a = simulate_deterministic(&m, &s, 1.0, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_deterministic(&m, &s, 1.0, &cfg).unwrap());
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn deterministic_cost_and_moments() {
        let m = standard();
        let v = StepPath::new(
            vec![crate::path::Tick::ZERO, crate::path::Tick::from_years(0.4)],
            vec![0.2, 0.05],
            crate::path::Tick::from_years(1.0),
        )
        .unwrap();
        let s = DeterministicStrategy::theta_direction(&m, 0.4, Consumption::Piecewise(v)).unwrap();
        let c = s.bind(&m).unwrap();
        let e = simulate_deterministic(&m, &s, 2.0, &SimConfig::uniform(1.0, 8, 100_000, 7)).unwrap();
        let u = UtilityParams::new(0.4, 0.7).unwrap();
        let est = e.estimate_cost(u).unwrap();
        assert!(est.covers(c.cost(2.0, 0.4, 0.7), 4.0, 0.0));
        let tm = e.terminal_mean();
        assert!(tm.covers(2.0 * (c.r_cum(1.0) - c.v_cum(1.0) + c.y_theta_cum(1.0)).exp(), 4.0, 0.0));
    }

    #[test]
    fn feedback_zero_premium_value() {
        let m = Market::constant(0.0, vec![0.0], vec![vec![0.2]], 1.0).unwrap();
        let e = simulate_hara_feedback(&m, UtilityParams::equal(0.5).unwrap(), 1.0, &SimConfig::uniform(1.0, 4, 100, 3)).unwrap();
        let est = e.estimate_cost(UtilityParams::equal(0.5).unwrap()).unwrap();
        assert!((est.mean - 2f64.sqrt()).abs() < 1e-12);
        assert!(est.std_error < 1e-15);
    }

    #[test]
    fn feedback_cost_matches_value() {
        let m = Market::constant(0.02, vec![0.08, 0.05], vec![vec![0.2, 0.0], vec![0.05, 0.25]], 1.0).unwrap();
        let u = UtilityParams::new(0.3, 0.6).unwrap();
        let f = HaraFeedback::new(HaraCoefficients::new(&m, u).unwrap(), 1.0).unwrap();
        let e = simulate_feedback(&m, &f, &SimConfig::uniform(1.0, 6, 100_000, 9)).unwrap();
        let est = e.estimate_cost(u).unwrap();
        assert!(est.covers(f.value().unwrap(), 4.0, 0.0), "{est:?} vs {}", f.value().unwrap());
        assert!(e.terminal_mean().covers(f.expected_wealth(1.0), 4.0, 0.0));
    }

    #[test]
    fn antithetic_reduces_variance() {
        let m = standard();
        let s = DeterministicStrategy::theta_direction(&m, 0.5, Consumption::Piecewise(StepPath::constant(0.0, 1.0).unwrap())).unwrap();
        let plain = simulate_deterministic(&m, &s, 1.0, &SimConfig::uniform(1.0, 1, 20_000, 5)).unwrap();
        let anti = simulate_deterministic(&m, &s, 1.0, &SimConfig::uniform(1.0, 1, 20_000, 5).with_antithetic(true)).unwrap();
        assert!(anti.terminal_mean().std_error < 0.5 * plain.terminal_mean().std_error);
    }

    #[test]
    fn grid_refinement_leaves_law_unchanged() {
        let m = standard();
        let s = DeterministicStrategy::theta_direction(&m, 0.8, Consumption::Piecewise(StepPath::constant(0.05, 1.0).unwrap())).unwrap();
        let coarse = simulate_deterministic(&m, &s, 1.0, &SimConfig::uniform(1.0, 1, 20_000, 1)).unwrap();
        let fine = simulate_deterministic(&m, &s, 1.0, &SimConfig::uniform(1.0, 50, 20_000, 2)).unwrap();
        let (_, p) = ks_two_sample(&coarse.terminal(), &fine.terminal());
        assert!(p > 0.001);
    }

    #[test]
    fn empirical_tail_matches_closed_form() {
        let m = standard();
        let s = DeterministicStrategy::theta_direction(&m, 0.5, Consumption::Piecewise(StepPath::constant(0.0, 1.0).unwrap())).unwrap();
        let e = simulate_deterministic(&m, &s, 1.0, &SimConfig::uniform(1.0, 2, 200_000, 4)).unwrap();
        let spec = RiskSpec::new(RiskKind::Es, 0.01, 0.5).unwrap();
        let prof = e.empirical_risk_curve(&m, &spec).unwrap();
        let c = s.bind(&m).unwrap();
        let ev = RiskEvaluator::new(&c, spec.quantile().unwrap());
        let last = prof.rows.last().unwrap();
        assert!((last.es - ev.expected_shortfall(1.0, 1.0)).abs() <= 4.0 * last.es_se);
        assert!(last.var_lo <= ev.value_at_risk(1.0, 1.0) && ev.value_at_risk(1.0, 1.0) <= last.var_hi);
        assert_eq!(prof.rows[0].var, 0.0);
    }

    #[test]
    fn too_few_paths_for_tail() {
        let m = standard();
        let s = DeterministicStrategy::bond_only(1, 1.0).unwrap();
        let e = simulate_deterministic(&m, &s, 1.0, &SimConfig::uniform(1.0, 2, 5000, 4)).unwrap();
        let spec = RiskSpec::new(RiskKind::Var, 0.01, 0.5).unwrap();
        assert!(matches!(e.empirical_risk_curve(&m, &spec), Err(Error::InsufficientPaths { .. })));
    }

    #[test]
    fn euler_agrees_with_exact_law() {
        let m = standard();
        let u = UtilityParams::equal(0.5).unwrap();
        let f = HaraFeedback::new(HaraCoefficients::new(&m, u).unwrap(), 1.0).unwrap();
        let euler = euler_feedback_terminal(&m, &f, 1e-3, 4000, 8).unwrap();
        let exact = simulate_feedback(&m, &f, &SimConfig::uniform(1.0, 1, 4000, 9)).unwrap().terminal();
        let (_, p) = ks_two_sample(&euler, &exact);
        assert!(p > 0.001, "p={p}");
    }

    #[test]
    fn type7_and_ks_basics() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_type7(&x, 0.5), 3.0);
        assert!((quantile_type7(&x, 0.1) - 1.4).abs() < 1e-15);
        let (d, p) = ks_two_sample(&x, &x);
        assert_eq!(d, 0.0);
        assert_eq!(p, 1.0);
        assert!(kolmogorov_survival(1.36) > 0.04 && kolmogorov_survival(1.36) < 0.06);
    }

    #[test]
    fn csv_spill() {
        let m = standard();
        let s = DeterministicStrategy::bond_only(1, 1.0).unwrap();
        let e = simulate_deterministic(&m, &s, 1.0, &SimConfig::uniform(1.0, 2, 4, 4)).unwrap();
        let mut buf = vec![];
        e.write_csv(&mut buf, 2).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 2 * 3);
    }
}
