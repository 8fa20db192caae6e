//! Brute-force search over a finite family of deterministic strategies.
//!
//! Exposures are `ρ θ_t/‖θ‖_T` for `ρ` on a uniform grid; consumption is
//! piecewise constant on equal pieces with levels from a finite set. Every
//! candidate is scored with the closed-form cost and filtered by the closed
//! form of the risk functional, so the result brackets the constrained
//! optimum from below without using any of the solvers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::Market;
use crate::path::{StepPath, Tick};
use crate::risk::{RiskEvaluator, RiskSpec};
use crate::strategy::{Consumption, DeterministicStrategy};
use crate::unconstrained::UtilityParams;

/// `J(x, ς)` for a deterministic strategy, exact.
pub fn cost_closed_form(market: &Market, strategy: &DeterministicStrategy, utility: UtilityParams, x: f64) -> Result<f64> {
    utility.validate()?;
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!("initial wealth must be positive, got {x}")));
    }
    Ok(strategy.bind(market)?.cost(x, utility.gamma1, utility.gamma2))
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyConfig {
    /// Spacing of the exposure-norm grid.
    pub rho_step: f64,
    /// Largest exposure norm scanned. `None` scans until the first norm that
    /// is infeasible without consumption.
    pub rho_max: Option<f64>,
    /// Number of equal consumption pieces.
    pub pieces: usize,
    /// Admissible consumption rates.
    pub levels: Vec<f64>,
    /// Coordinate-ascent sweeps over the pieces.
    pub sweeps: usize,
    /// Uniform points used to screen feasibility during the search.
    pub check_points: usize,
    /// Uniform points used to re-verify the winner.
    pub verify_points: usize,
    /// Extra constant exposure directions drawn at random, scanned without
    /// consumption; guards against a wrong direction in the main family.
    pub random_directions: usize,
    pub seed: u64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            rho_step: 1e-4,
            rho_max: None,
            pieces: 8,
            levels: (0..=60).map(|i| 0.005 * i as f64).collect(),
            sweeps: 4,
            check_points: 200,
            verify_points: 10_000,
            random_directions: 0,
            seed: 0,
        }
    }
}

/// Best candidate for one exposure norm.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateRecord {
    pub rho: f64,
    /// Consumption level on each piece.
    pub levels: Vec<f64>,
    pub value: f64,
    pub feasible: bool,
    /// `None` for the `θ` direction.
    pub direction: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub best_value: f64,
    pub best: CandidateRecord,
    pub best_strategy: DeterministicStrategy,
    pub candidates: Vec<CandidateRecord>,
    pub evaluations: usize,
}

impl OracleResult {
    /// One row per scanned norm: `rho, direction, v_1..v_k, J, feasible`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let k = self.best.levels.len();
        let mut header = vec!["rho".to_string(), "direction".to_string()];
        header.extend((1..=k).map(|i| format!("v_{i}")));
        header.extend(["J".to_string(), "feasible".to_string()]);
        out.write_record(&header)?;
        for c in &self.candidates {
            let mut row = vec![
                c.rho.to_string(),
                c.direction.map_or_else(|| "theta".to_string(), |d| d.to_string()),
            ];
            row.extend(c.levels.iter().map(|v| v.to_string()));
            row.push(c.value.to_string());
            row.push(c.feasible.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Search<'a> {
    market: &'a Market,
    utility: UtilityParams,
    spec: &'a RiskSpec,
    x: f64,
    config: &'a FamilyConfig,
    starts: Vec<Tick>,
}

impl Search<'_> {
    fn consumption(&self, levels: &[f64]) -> Result<Consumption> {
        Ok(Consumption::Piecewise(StepPath::new(
            self.starts.clone(),
            levels.to_vec(),
            Tick::from_years(self.market.horizon()),
        )?))
    }

    fn strategy(&self, rho: f64, direction: Option<&[f64]>, levels: &[f64]) -> Result<DeterministicStrategy> {
        let v = self.consumption(levels)?;
        match direction {
            None => DeterministicStrategy::theta_direction(self.market, rho, v),
            Some(w) => {
                let scale = rho / self.market.horizon().sqrt();
                let y = StepPath::constant(w.iter().map(|c| scale * c).collect(), self.market.horizon())?;
                DeterministicStrategy::new(y, v)
            }
        }
    }

    /// Cost when the candidate passes the constraint on `points` uniform
    /// points (plus exact minimisers for VaR), else `None`.
    fn score(&self, s: &DeterministicStrategy, points: usize) -> Result<Option<f64>> {
        let c = s.bind(self.market)?;
        let ev = RiskEvaluator::new(&c, self.spec.quantile()?);
        let (inf, _) = ev.inf_log_functional(self.spec.kind, points);
        if inf < self.spec.log_bound() {
            return Ok(None);
        }
        Ok(Some(c.cost(self.x, self.utility.gamma1, self.utility.gamma2)))
    }

    /// Coordinate ascent over the consumption levels at fixed exposure.
    fn best_for_rho(&self, rho: f64, direction: Option<&[f64]>) -> Result<(CandidateRecord, usize)> {
        let k = self.config.pieces;
        let levels = &self.config.levels;
        let mut evals = 0;
        let mut eval = |lv: &[f64]| -> Result<Option<f64>> {
            evals += 1;
            self.score(&self.strategy(rho, direction, lv)?, self.config.check_points)
        };
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &l in levels {
            let lv = vec![l; k];
            if let Some(j) = eval(&lv)? {
                if best.as_ref().is_none_or(|(b, _)| j > *b) {
                    best = Some((j, lv));
                }
            }
        }
        if let Some((mut bj, mut bl)) = best.take() {
            for _ in 0..self.config.sweeps {
                let mut improved = false;
                for piece in 0..k {
                    for &l in levels {
                        if l == bl[piece] {
                            continue;
                        }
                        let mut trial = bl.clone();
                        trial[piece] = l;
                        if let Some(j) = eval(&trial)? {
                            if j > bj {
                                bj = j;
                                bl = trial;
                                improved = true;
                            }
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            best = Some((bj, bl));
        }
        let record = match best {
            Some((value, levels)) => CandidateRecord {
                rho,
                levels,
                value,
                feasible: true,
                direction: None,
            },
            None => CandidateRecord {
                rho,
                levels: vec![0.0; k],
                value: f64::NAN,
                feasible: false,
                direction: None,
            },
        };
        Ok((record, evals))
    }

    /// Norms on the grid up to the configured cap, or up to the first one
    /// that fails without consumption.
    fn rho_grid(&self, direction: Option<&[f64]>) -> Result<Vec<f64>> {
        let step = self.config.rho_step;
        if !(step > 0.0) {
            return Ok(vec![]);
        }
        if direction.is_none() && self.market.theta_norm_total() == 0.0 {
            return Ok(vec![0.0]);
        }
        let zero = vec![0.0; self.config.pieces];
        let mut out = vec![];
        for i in 0.. {
            let rho = step * i as f64;
            if let Some(max) = self.config.rho_max {
                if rho > max * (1.0 + 1e-12) {
                    break;
                }
            } else if i > 10_000_000 {
                break;
            }
            let feasible = self
                .score(&self.strategy(rho, direction, &zero)?, self.config.check_points)?
                .is_some();
            if !feasible && self.config.rho_max.is_none() {
                break;
            }
            out.push(rho);
        }
        Ok(out)
    }
}

/// Searches the family for the best feasible candidate.
///
/// The winner is re-checked on `verify_points` uniform points; if it fails
/// there the next best candidate is tried.
pub fn grid_search_oracle(
    market: &Market,
    utility: UtilityParams,
    spec: &RiskSpec,
    x: f64,
    config: &FamilyConfig,
) -> Result<OracleResult> {
    utility.validate()?;
    spec.validate()?;
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!("initial wealth must be positive, got {x}")));
    }
    if config.pieces == 0 || config.levels.is_empty() || config.levels.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::EmptyFeasibleSet);
    }
    let horizon = market.horizon();
    let starts = (0..config.pieces)
        .map(|i| Tick::from_years(horizon * i as f64 / config.pieces as f64))
        .collect();
    let search = Search {
        market,
        utility,
        spec,
        x,
        config,
        starts,
    };

    let mut directions: Vec<Option<Vec<f64>>> = vec![None];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.random_directions {
        let w: Vec<f64> = (0..market.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = w.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 0.0 {
            directions.push(Some(w.iter().map(|c| c / n).collect()));
        }
    }

    let mut candidates = vec![];
    let mut evaluations = 0;
    for (di, dir) in directions.iter().enumerate() {
        let dir = dir.as_deref();
        let grid = search.rho_grid(dir)?;
        evaluations += grid.len();
        let rows: Vec<Result<(CandidateRecord, usize)>> = grid
            .par_iter()
            .map(|&rho| {
                if dir.is_some() {
                    // Random directions only probe the exposure.
                    let s = search.strategy(rho, dir, &vec![0.0; config.pieces])?;
                    let value = search.score(&s, config.check_points)?;
                    return Ok((
                        CandidateRecord {
                            rho,
                            levels: vec![0.0; config.pieces],
                            value: value.unwrap_or(f64::NAN),
                            feasible: value.is_some(),
                            direction: None,
                        },
                        1,
                    ));
                }
                search.best_for_rho(rho, None)
            })
            .collect();
        for row in rows {
            let (mut rec, n) = row?;
            if di > 0 {
                rec.direction = Some(di - 1);
            }
            evaluations += n;
            candidates.push(rec);
        }
    }

    let mut order: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].feasible).collect();
    order.sort_by(|&a, &b| candidates[b].value.total_cmp(&candidates[a].value));
    for i in order {
        let rec = &candidates[i];
        let dir = rec.direction.and_then(|d| directions[d + 1].as_deref());
        let s = search.strategy(rec.rho, dir, &rec.levels)?;
        if let Some(value) = search.score(&s, config.verify_points)? {
            return Ok(OracleResult {
                best_value: value,
                best: rec.clone(),
                best_strategy: s,
                candidates,
                evaluations,
            });
        }
    }
    Err(Error::EmptyFeasibleSet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::RiskKind;
    use crate::unconstrained::UtilityParams;

    fn standard() -> Market {
        Market::constant(0.0, vec![0.1], vec![vec![0.2]], 1.0).unwrap()
    }

    fn coarse() -> FamilyConfig {
        FamilyConfig {
            rho_step: 2e-3,
            levels: (0..=30).map(|i| 0.01 * i as f64).collect(),
            pieces: 4,
            sweeps: 2,
            verify_points: 2000,
            ..FamilyConfig::default()
        }
    }

    #[test]
    fn bond_only_costs() {
        let m = standard();
        let s = DeterministicStrategy::bond_only(1, 1.0).unwrap();
        let j = cost_closed_form(&m, &s, UtilityParams::new(0.3, 0.5).unwrap(), 1.0).unwrap();
        assert!((j - 1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_var_search_approaches_closed_form() {
        let m = standard();
        let spec = RiskSpec::new(RiskKind::Var, 0.01, 0.1).unwrap();
        let u = UtilityParams::equal(1.0).unwrap();
        let r = grid_search_oracle(&m, u, &spec, 1.0, &coarse()).unwrap();
        let exact = 1.028_810_085_068_566_2;
        assert!(r.best_value <= exact * (1.0 + 1e-9));
        assert!(r.best_value > exact * (1.0 - 2e-3));
        assert!(r.best.levels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tight_search_stays_riskless() {
        let m = standard();
        let spec = RiskSpec::new(RiskKind::Var, 0.01, 0.1).unwrap();
        let u = UtilityParams::equal(0.5).unwrap();
        let r = grid_search_oracle(&m, u, &spec, 1.0, &coarse()).unwrap();
        let exact = 1.264_911_064_067_351_7;
        assert!(r.best_value <= exact * (1.0 + 1e-9));
        assert!(r.best_value > exact * (1.0 - 5e-3));
        assert!(r.best.rho < 0.01);
    }

    #[test]
    fn empty_family() {
        let m = standard();
        let spec = RiskSpec::new(RiskKind::Es, 0.01, 0.1).unwrap();
        let cfg = FamilyConfig {
            levels: vec![],
            ..coarse()
        };
        assert!(matches!(
            grid_search_oracle(&m, UtilityParams::equal(1.0).unwrap(), &spec, 1.0, &cfg),
            Err(Error::EmptyFeasibleSet)
        ));
    }

    #[test]
    fn random_directions_do_not_beat_theta() {
        let m = Market::constant(0.01, vec![0.08, 0.05], vec![vec![0.2, 0.0], vec![0.05, 0.25]], 1.0).unwrap();
        let spec = RiskSpec::new(RiskKind::Var, 0.05, 0.2).unwrap();
        let cfg = FamilyConfig {
            random_directions: 8,
            seed: 3,
            ..coarse()
        };
        let r = grid_search_oracle(&m, UtilityParams::equal(1.0).unwrap(), &spec, 1.0, &cfg).unwrap();
        assert_eq!(r.best.direction, None);
        let mut buf = vec![];
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("rho,direction,v_1,v_2,v_3,v_4,J,feasible"));
    }
}
