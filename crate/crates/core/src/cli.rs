//! Command-line front end: `solve`, `simulate`, `verify` and `oracle`.
//!
//! Exit codes: 0 on success, 1 on malformed input, 2 when the problem has no
//! closed-form answer in the requested regime or a numerical check fails.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value as Json};

use merton_risk::es::PsiFunction;
use merton_risk::hjb::{self, HjbGrid, HjbTolerances};
use merton_risk::market::Market;
use merton_risk::monte_carlo::{simulate_deterministic, simulate_feedback, PathEnsemble, SimConfig};
use merton_risk::oracle::{cost_closed_form, grid_search_oracle, FamilyConfig};
use merton_risk::problem::{Problem, ProblemSpec};
use merton_risk::risk::{constraint_profile_bound, profile_grid, RiskKind};
use merton_risk::solution::{Controls, Solution};
use merton_risk::strategy::{DeterministicStrategy, StrategySpec};
use merton_risk::unconstrained::{HaraCoefficients, HaraFeedback};

pub const THREADS_ENV: &str = "MERTON_RISK_THREADS";

/// A numerical check that ran to completion and failed its tolerance.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ToleranceFailure(String);

#[derive(Debug, Parser)]
#[command(name = "merton-risk", version, about = "Optimal consumption and investment under VaR and ES constraints")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a problem and write the optimal controls.
    Solve(SolveArgs),
    /// Simulate wealth under the optimal or a given strategy.
    Simulate(SimulateArgs),
    /// Check the HJB equation for the unconstrained value function.
    Verify(VerifyArgs),
    /// Brute-force search over deterministic strategies.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Problem file (JSON).
    spec: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// Number of time steps in the control and risk curves.
    #[arg(long, default_value_t = 200)]
    grid: usize,
    /// Cross-check the value against the grid-search oracle.
    #[arg(long)]
    oracle: bool,
    /// Cross-check the value with this many Monte Carlo paths.
    #[arg(long, default_value_t = 0)]
    mc_paths: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    /// Number of monitoring steps.
    #[arg(long, default_value_t = 100)]
    grid: usize,
    /// Strategy to simulate instead of the optimum: a strategy JSON, a
    /// solution.json, or a CSV with columns `t, pi_1..pi_d, v`.
    #[arg(long)]
    strategy: Option<PathBuf>,
    #[arg(long)]
    antithetic: bool,
    /// Also write the first K paths to ensemble.csv.
    #[arg(long, default_value_t = 0)]
    spill: usize,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Nodes per axis of the (t, x) grid.
    #[arg(long, default_value_t = 50)]
    grid: usize,
    /// Wealth range as `lo,hi`; defaults to `[x0/10, 10 x0]`.
    #[arg(long, value_parser = parse_pair)]
    x_range: Option<(f64, f64)>,
    /// Explicit time nodes, comma separated; nodes on a breakpoint are an error.
    #[arg(long, value_delimiter = ',')]
    t_nodes: Option<Vec<f64>>,
    /// Random control probes per node.
    #[arg(long, default_value_t = 16)]
    probes: usize,
    /// Paths for the moment witness; 0 skips it.
    #[arg(long, default_value_t = 0)]
    mc_paths: usize,
    #[arg(long, hide = true)]
    inject_a2_fault: Option<f64>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1e-4)]
    rho_step: f64,
    #[arg(long, default_value_t = 8)]
    pieces: usize,
    #[arg(long, default_value_t = 0.3)]
    level_max: f64,
    #[arg(long, default_value_t = 0.005)]
    level_step: f64,
    /// Extra random exposure directions.
    #[arg(long, default_value_t = 0)]
    directions: usize,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

/// Caps the rayon pool at `MERTON_RISK_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<ToleranceFailure>() {
        return 2;
    }
    match e.downcast_ref::<merton_risk::Error>() {
        Some(err) if err.is_regime_outcome() => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(a) => solve(a),
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn load_problem(path: &Path) -> Result<Problem> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = ProblemSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Problem::new(spec)?)
}

fn out_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = out_file(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

fn prepare(common: &Common) -> Result<Problem> {
    let problem = load_problem(&common.spec)?;
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(problem)
}

/// Report for a problem without a closed-form answer.
fn no_solution_report(e: &merton_risk::Error) -> Json {
    json!({
        "status": "no_solution",
        "reason": e.reason(),
        "message": e.to_string(),
        "conditions": e.conditions(),
    })
}

fn uniform_grid(market: &Market, n: usize) -> Vec<f64> {
    let n = n.max(1);
    let horizon = market.horizon();
    let mut g: Vec<f64> = (0..=n).map(|i| horizon * (i as f64 / n as f64)).collect();
    g.extend_from_slice(market.knots());
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

fn solve(args: SolveArgs) -> Result<()> {
    let problem = prepare(&args.common)?;
    let out = &args.common.out;
    let spec = &problem.spec;
    let market = &problem.market;
    let x = problem.x0();
    let solution = match problem.solve() {
        Ok(s) => s,
        Err(e) => {
            if e.is_regime_outcome() && spec.wants("solution.json") {
                write_json(out, "solution.json", &no_solution_report(&e))?;
            }
            return Err(e.into());
        }
    };
    info!("regime {}", solution.regime.tag());

    let grid = match solution.strategy() {
        Some(s) => profile_grid(&s.bind(market)?, args.grid + 1),
        None => uniform_grid(market, args.grid),
    };
    let mut report = serde_json::to_value(&solution)?;
    report["status"] = json!("ok");

    if let (Some(risk), Some(strategy)) = (problem.risk(), solution.strategy()) {
        let profile = constraint_profile_bound(&strategy.bind(market)?, risk, x, &grid)?;
        report["risk_check"] = json!({
            "max_ratio": profile.max_ratio,
            "argmax_time": profile.argmax_time,
            "inf_log": profile.inf_log,
            "log_bound": profile.log_bound,
            "satisfied": profile.satisfied(),
        });
        if spec.wants("risk_profile.csv") {
            profile.write_csv(out_file(out, "risk_profile.csv")?)?;
        }
        if risk.kind == RiskKind::Es && spec.wants("psi_curve.csv") {
            write_psi_curve(out, market, risk.alpha, risk.zeta)?;
        }
    }
    if spec.wants("controls.csv") {
        write_controls(out, market, &solution, &grid)?;
    }
    if spec.wants("wealth.csv") {
        write_wealth(out, market, &solution, &grid)?;
    }

    let mut failures = vec![];
    if args.mc_paths > 0 {
        let cfg = SimConfig::uniform(market.horizon(), 50, args.mc_paths, args.common.seed);
        let (ensemble, target) = ensemble_for(market, &solution, &cfg)?;
        let est = ensemble.estimate_cost(problem.utility())?;
        let covered = target.map(|t| est.covers(t, 4.0, 1e-12 * t.abs()));
        report["monte_carlo"] = json!({
            "n_paths": args.mc_paths,
            "seed": args.common.seed,
            "estimate": est,
            "closed_form": target,
            "within_4se": covered,
        });
        if covered == Some(false) {
            failures.push(format!("Monte Carlo cost {} ± {} misses {}", est.mean, est.std_error, target.unwrap()));
        }
    }
    if args.oracle {
        let risk = problem
            .risk()
            .ok_or_else(|| anyhow!("--oracle needs a risk block in the problem"))?;
        let cfg = FamilyConfig {
            seed: args.common.seed,
            ..FamilyConfig::default()
        };
        let res = grid_search_oracle(market, problem.utility(), risk, x, &cfg)?;
        res.write_csv(out_file(out, "oracle.csv")?)?;
        let verdict = oracle_verdict(res.best_value, solution.value());
        if !verdict.dominated {
            failures.push(format!("oracle value {} exceeds solver value", res.best_value));
        }
        report["oracle"] = serde_json::to_value(&verdict)?;
    }
    if spec.wants("solution.json") {
        write_json(out, "solution.json", &report)?;
    }
    if !failures.is_empty() {
        return Err(ToleranceFailure(failures.join("; ")).into());
    }
    Ok(())
}

fn write_controls(out: &Path, market: &Market, solution: &Solution, grid: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out_file(out, "controls.csv")?);
    let mut header = vec!["t".to_string()];
    header.extend((1..=market.dim()).map(|i| format!("pi_{i}")));
    header.push("v".into());
    w.write_record(&header)?;
    for row in solution.control_curve(market, grid) {
        let mut rec = vec![row.t];
        rec.extend(row.pi);
        rec.push(row.v);
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and median of optimal wealth.
fn write_wealth(out: &Path, market: &Market, solution: &Solution, grid: &[f64]) -> Result<()> {
    let x = solution.x0;
    let mut w = csv::Writer::from_writer(out_file(out, "wealth.csv")?);
    w.write_record(["t", "mean", "median"])?;
    match &solution.controls {
        Controls::Deterministic(s) => {
            let c = s.bind(market)?;
            for &t in grid {
                let m = c.log_mean(t);
                w.serialize((t, x * (m + 0.5 * c.log_var(t)).exp(), x * m.exp()))?;
            }
        }
        // Wealth is decreasing in the Gaussian driver, so the driver's
        // median maps to the wealth median.
        Controls::Feedback(f) => {
            for &t in grid {
                w.serialize((t, f.expected_wealth(t), f.wealth_at_mean_driver(market, t)))?;
            }
        }
        Controls::None => warn!("no optimal controls; wealth.csv left empty"),
    }
    w.flush()?;
    Ok(())
}

fn write_psi_curve(out: &Path, market: &Market, alpha: f64, zeta: f64) -> Result<()> {
    let psi = PsiFunction::for_market(market, alpha)?;
    let upper = psi.root(zeta).map(|r| 2.0 * r).unwrap_or(1.0).max(1e-3);
    let rhos: Vec<f64> = (0..=200).map(|i| upper * i as f64 / 200.0).collect();
    let mut w = csv::Writer::from_writer(out_file(out, "psi_curve.csv")?);
    w.write_record(["rho", "psi"])?;
    for (r, p) in psi.curve(&rhos) {
        w.serialize((r, p))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct OracleVerdict {
    oracle_value: f64,
    solver_value: Option<f64>,
    relative_gap: Option<f64>,
    dominated: bool,
}

/// The oracle searches a subset of the admissible strategies, so it may not
/// beat the solver by more than rounding.
fn oracle_verdict(oracle_value: f64, solver_value: Option<f64>) -> OracleVerdict {
    let relative_gap = solver_value.map(|s| (s - oracle_value) / s.abs());
    OracleVerdict {
        oracle_value,
        solver_value,
        relative_gap,
        dominated: relative_gap.is_none_or(|g| g >= -1e-9),
    }
}

/// Ensemble under the solution's controls and the closed-form cost, when
/// there is one.
fn ensemble_for(market: &Market, solution: &Solution, cfg: &SimConfig) -> Result<(PathEnsemble, Option<f64>)> {
    match &solution.controls {
        Controls::Deterministic(s) => Ok((simulate_deterministic(market, s, solution.x0, cfg)?, solution.value())),
        Controls::Feedback(f) => Ok((simulate_feedback(market, f, cfg)?, solution.value())),
        Controls::None => Err(merton_risk::Error::UnsupportedRegime("the value is unbounded; nothing to simulate".into()).into()),
    }
}

/// Reads a strategy from a strategy JSON, a solution.json or a CSV of
/// `t, pi_1..pi_d, v` rows (each row starts a piece).
fn load_strategy(path: &Path, market: &Market) -> Result<DeterministicStrategy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "csv") {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let d = market.dim();
        let mut pieces = vec![];
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != d + 2 {
                bail!("{}: row {} has {} fields, expected {}", path.display(), i + 1, rec.len(), d + 2);
            }
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("{}: row {}", path.display(), i + 1))?;
            // The last row of a sampled curve sits at the horizon.
            if vals[0] < market.horizon() {
                pieces.push((vals[0], vals[1..=d].to_vec(), vals[d + 1]));
            }
        }
        return Ok(DeterministicStrategy::from_portfolio(market, &pieces)?);
    }
    let json: Json = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let spec_json = match json.pointer("/controls/strategy") {
        Some(s) => s.clone(),
        None if json.get("controls").is_some() => bail!("{} has no deterministic strategy", path.display()),
        None => json,
    };
    let spec: StrategySpec = serde_json::from_value(spec_json).with_context(|| format!("parsing {}", path.display()))?;
    Ok(DeterministicStrategy::from_spec(&spec)?)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let problem = prepare(&args.common)?;
    let out = &args.common.out;
    let market = &problem.market;
    let x = problem.x0();
    let utility = problem.utility();
    let cfg = SimConfig::uniform(market.horizon(), args.grid, args.paths, args.common.seed).with_antithetic(args.antithetic);

    let (ensemble, closed_form, strategy) = match &args.strategy {
        Some(path) => {
            let s = load_strategy(path, market)?;
            let e = simulate_deterministic(market, &s, x, &cfg)?;
            let j = cost_closed_form(market, &s, utility, x)?;
            (e, Some(j), Some(s))
        }
        None => {
            let solution = problem.solve()?;
            let (e, j) = ensemble_for(market, &solution, &cfg)?;
            (e, j, solution.strategy().cloned())
        }
    };
    let summary = ensemble.summary(Some(utility))?;
    let mut report = json!({
        "ensemble": summary,
        "closed_form_cost": closed_form,
    });
    if let (Some(cost), Some(j)) = (summary.cost, closed_form) {
        report["cost_within_4se"] = json!(cost.covers(j, 4.0, 1e-12 * j.abs()));
    }

    if let Some(risk) = problem.risk() {
        let emp = ensemble.empirical_risk_curve(market, risk)?;
        let exact = strategy
            .as_ref()
            .map(|s| constraint_profile_bound(&s.bind(market)?, risk, x, ensemble.times()))
            .transpose()?;
        report["risk"] = json!({
            "kind": risk.kind,
            "alpha": risk.alpha,
            "zeta": risk.zeta,
            "empirical_max_ratio": emp.max_ratio,
            "empirical_max_ratio_se": emp.max_ratio_se,
            "empirical_argmax_time": emp.argmax_time,
            "empirical_within_bound_4se": emp.within_bound(4.0),
            "exact_max_ratio": exact.as_ref().map(|p| p.max_ratio),
        });
        if problem.spec.wants("risk_profile.csv") {
            let mut w = csv::Writer::from_writer(out_file(out, "risk_profile.csv")?);
            w.write_record([
                "t", "var", "es", "level", "ratio", "var_mc", "var_mc_lo", "var_mc_hi", "es_mc", "es_mc_se", "ratio_mc",
                "ratio_mc_se",
            ])?;
            for (i, row) in emp.rows.iter().enumerate() {
                let (var, es, ratio) = match &exact {
                    Some(p) => (p.var[i], p.es[i], p.ratio[i]),
                    None => (f64::NAN, f64::NAN, f64::NAN),
                };
                w.serialize((
                    row.t, var, es, row.level, ratio, row.var, row.var_lo, row.var_hi, row.es, row.es_se, row.ratio,
                    row.ratio_se,
                ))?;
            }
            w.flush()?;
        }
    }
    if args.spill > 0 {
        ensemble.write_csv(out_file(out, "ensemble.csv")?, args.spill)?;
    }
    write_json(out, "summary.json", &report)?;
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<()> {
    let problem = prepare(&args.common)?;
    let out = &args.common.out;
    let market = &problem.market;
    let x = problem.x0();
    if problem.risk().is_some() {
        warn!("verify checks the unconstrained value function; the risk block is ignored");
    }
    let mut coefficients = HaraCoefficients::new(market, problem.utility())?;
    if let Some(f) = args.inject_a2_fault {
        warn!("scaling A2 by {f}");
        coefficients = coefficients.with_a2_fault(f);
    }
    let (lo, hi) = args.x_range.unwrap_or((0.1 * x, 10.0 * x));
    let grid = match &args.t_nodes {
        Some(t) => {
            let n = args.grid.max(1);
            let xs = (0..n)
                .map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / (n.max(2) - 1) as f64).exp())
                .collect();
            HjbGrid::new(market, t.clone(), xs)?
        }
        None => HjbGrid::off_breakpoints(market, args.grid, args.grid, lo, hi)?,
    };
    let report = hjb::verify(market, coefficients.clone(), &grid, args.probes, args.common.seed, &HjbTolerances::default())?;
    let mut json_report = serde_json::to_value(&report)?;
    if args.mc_paths > 0 {
        let feedback = HaraFeedback::new(coefficients.clone(), x)?;
        let cfg = SimConfig::uniform(market.horizon(), 50, args.mc_paths, args.common.seed);
        let ensemble = simulate_feedback(market, &feedback, &cfg)?;
        json_report["moment_witness"] = serde_json::to_value(hjb::moment_witness(&coefficients, &ensemble, 1.5)?)?;
    }
    write_json(out, "hjb_report.json", &json_report)?;
    report.write_residual_csv(out_file(out, "hjb_residuals.csv")?)?;
    if !report.passed {
        return Err(ToleranceFailure(format!(
            "HJB check failed: residual {:.3e}, terminal error {:.3e}, Hamiltonian gap {:.3e}, probe excess {:.3e}",
            report.max_rel_residual, report.terminal_error, report.hamiltonian_gap, report.probe_excess
        ))
        .into());
    }
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<()> {
    let problem = prepare(&args.common)?;
    let out = &args.common.out;
    let risk = problem
        .risk()
        .ok_or_else(|| anyhow!("the oracle needs a risk block in the problem"))?;
    if !(args.level_step > 0.0 && args.level_max >= 0.0) {
        bail!("level grid needs a positive step and nonnegative maximum");
    }
    let n_levels = (args.level_max / args.level_step + 1e-9).floor() as usize;
    let cfg = FamilyConfig {
        rho_step: args.rho_step,
        pieces: args.pieces,
        levels: (0..=n_levels).map(|i| i as f64 * args.level_step).collect(),
        random_directions: args.directions,
        seed: args.common.seed,
        ..FamilyConfig::default()
    };
    let res = grid_search_oracle(&problem.market, problem.utility(), risk, problem.x0(), &cfg)?;
    res.write_csv(out_file(out, "oracle.csv")?)?;
    let solver = problem.solve();
    let verdict = oracle_verdict(res.best_value, solver.as_ref().ok().and_then(|s| s.value()));
    write_json(
        out,
        "oracle.json",
        &json!({
            "config": cfg,
            "evaluations": res.evaluations,
            "best": res.best,
            "best_strategy": res.best_strategy.to_spec(),
            "verdict": verdict,
            "solver": match &solver {
                Ok(s) => json!({"regime": s.regime, "value": s.value}),
                Err(e) => json!({"reason": e.reason(), "message": e.to_string()}),
            },
        }),
    )?;
    if !verdict.dominated {
        return Err(ToleranceFailure(format!(
            "oracle value {} exceeds solver value {:?}",
            verdict.oracle_value, verdict.solver_value
        ))
        .into());
    }
    Ok(())
}
