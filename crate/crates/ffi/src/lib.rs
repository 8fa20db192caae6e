//! C ABI for the solvers.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns an [`MrStatus`]; on failure
//! [`mr_last_error_message`] describes the error on the calling thread.
//! Strings returned by the library are freed with [`mr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use merton_risk::es::PsiFunction;
use merton_risk::hjb::{self, HjbGrid, HjbTolerances};
use merton_risk::market::Market;
use merton_risk::monte_carlo::{simulate_deterministic, simulate_feedback, SimConfig};
use merton_risk::problem::{Problem, ProblemSpec};
use merton_risk::risk::{RiskKind, RiskSpec};
use merton_risk::solution::{Controls, Solution, Value};
use merton_risk::unconstrained::HaraCoefficients;
use merton_risk::var::rho_var;
use merton_risk::Error;

/// Result codes. `MR_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidInput = 4,
    ConditionViolated = 5,
    NoClosedFormRegime = 6,
    UnsupportedRegime = 7,
    HypothesisViolated = 8,
    InsufficientPaths = 9,
    GridTouchesBreakpoint = 10,
    NumericalFailure = 11,
    BufferTooSmall = 12,
    Unbounded = 13,
    Panic = 14,
}

impl From<&Error> for MrStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::ConditionViolated { .. } => MrStatus::ConditionViolated,
            Error::NoClosedFormRegime { .. } => MrStatus::NoClosedFormRegime,
            Error::UnsupportedRegime(_) => MrStatus::UnsupportedRegime,
            Error::HypothesisViolated { .. } => MrStatus::HypothesisViolated,
            Error::InsufficientPaths { .. } => MrStatus::InsufficientPaths,
            Error::GridTouchesBreakpoint { .. } => MrStatus::GridTouchesBreakpoint,
            Error::ConvergenceFailure { .. } | Error::EmptyFeasibleSet => MrStatus::NumericalFailure,
            _ => MrStatus::InvalidInput,
        }
    }
}

/// A validated problem: market, utility, optional risk bound, endowment.
pub struct MrProblem {
    inner: Problem,
}

/// Output of [`mr_problem_solve`].
pub struct MrSolution {
    solution: Solution,
    market: Market,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: MrStatus, msg: impl Into<String>) -> MrStatus {
    set_error(msg);
    status
}

fn fail_with(e: &Error) -> MrStatus {
    fail(MrStatus::from(e), e.to_string())
}

/// Runs `f`, turning panics into `MR_STATUS_PANIC`.
fn guard(f: impl FnOnce() -> MrStatus) -> MrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(MrStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, MrStatus> {
    if p.is_null() {
        return Err(fail(MrStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(MrStatus::InvalidUtf8, e.to_string()))
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(MrStatus::NullPointer, concat!("null argument `", stringify!($p), "`"));
        })+
    };
}

/// Message for the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a problem from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_problem_from_json(json: *const c_char, out: *mut *mut MrProblem) -> MrStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        let text = try_ffi!(str_arg(json));
        let spec = match ProblemSpec::from_json(text) {
            Ok(s) => s,
            Err(e) => return fail(MrStatus::ParseError, e.to_string()),
        };
        match Problem::new(spec) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(MrProblem { inner: p }));
                MrStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// # Safety
/// `p` must come from [`mr_problem_from_json`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn mr_problem_free(p: *mut MrProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of risky assets.
///
/// # Safety
/// `p` must be a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn mr_problem_dim(p: *const MrProblem) -> usize {
    p.as_ref().map_or(0, |p| p.inner.market.dim())
}

/// Solves the problem. Regime outcomes (no closed form, violated
/// hypotheses) are reported through the status with `*out` left NULL.
///
/// # Safety
/// `p` must be a live problem handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_problem_solve(p: *const MrProblem, out: *mut *mut MrSolution) -> MrStatus {
    guard(|| {
        non_null!(p, out);
        *out = ptr::null_mut();
        let p = &(*p).inner;
        match p.solve() {
            Ok(solution) => {
                *out = Box::into_raw(Box::new(MrSolution {
                    solution,
                    market: p.market.clone(),
                }));
                MrStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// # Safety
/// `s` must come from [`mr_problem_solve`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn mr_solution_free(s: *mut MrSolution) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Optimal value; `MR_STATUS_UNBOUNDED` with `*out = +inf` when the
/// supremum is infinite.
///
/// # Safety
/// `s` must be a live solution handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_solution_value(s: *const MrSolution, out: *mut f64) -> MrStatus {
    guard(|| {
        non_null!(s, out);
        match (*s).solution.value {
            Value::Finite(v) => {
                *out = v;
                MrStatus::Ok
            }
            Value::Unbounded => {
                *out = f64::INFINITY;
                fail(MrStatus::Unbounded, "the value is unbounded")
            }
        }
    })
}

/// Regime tag such as `"var-tight"`; a static string, do not free.
///
/// # Safety
/// `s` must be a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn mr_solution_regime(s: *const MrSolution) -> *const c_char {
    let Some(s) = s.as_ref() else {
        return ptr::null();
    };
    let tag = match s.solution.regime.tag() {
        "unconstrained-linear" => c"unconstrained-linear",
        "unconstrained-hara" => c"unconstrained-hara",
        "unconstrained-equal-gamma" => c"unconstrained-equal-gamma",
        "var-linear" => c"var-linear",
        "var-loose" => c"var-loose",
        "var-tight" => c"var-tight",
        "es-linear" => c"es-linear",
        "es-loose" => c"es-loose",
        "es-tight" => c"es-tight",
        _ => c"unknown",
    };
    tag.as_ptr()
}

/// Portfolio weights (`d` entries written to `pi`) and consumption rate at
/// time `t`. Feedback controls are evaluated at median wealth.
///
/// # Safety
/// `s` must be a live solution handle, `pi` must hold `d` doubles and `v`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_solution_controls(s: *const MrSolution, t: f64, pi: *mut f64, d: usize, v: *mut f64) -> MrStatus {
    guard(|| {
        non_null!(s, pi, v);
        let s = &*s;
        if let Err(e) = s.market.check_time(t) {
            return fail_with(&e);
        }
        if d < s.market.dim() {
            return fail(MrStatus::BufferTooSmall, format!("need {} entries, got {d}", s.market.dim()));
        }
        if matches!(s.solution.controls, Controls::None) {
            return fail(MrStatus::Unbounded, "no optimal controls exist");
        }
        let row = &s.solution.control_curve(&s.market, &[t])[0];
        std::slice::from_raw_parts_mut(pi, row.pi.len()).copy_from_slice(&row.pi);
        *v = row.v;
        MrStatus::Ok
    })
}

/// The solution as JSON; free with [`mr_string_free`].
///
/// # Safety
/// `s` must be a live solution handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_solution_to_json(s: *const MrSolution, out: *mut *mut c_char) -> MrStatus {
    guard(|| {
        non_null!(s, out);
        *out = ptr::null_mut();
        match serde_json::to_string(&(*s).solution) {
            Ok(text) => {
                *out = CString::new(text).unwrap_or_default().into_raw();
                MrStatus::Ok
            }
            Err(e) => fail(MrStatus::NumericalFailure, e.to_string()),
        }
    })
}

/// Largest admissible exposure norm under the VaR bound.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_rho_var(theta_norm: f64, alpha: f64, zeta: f64, out: *mut f64) -> MrStatus {
    guard(|| {
        non_null!(out);
        let q = match RiskSpec::new(RiskKind::Var, alpha, zeta).and_then(|r| r.quantile()) {
            Ok(q) => q,
            Err(e) => return fail_with(&e),
        };
        if !(theta_norm >= 0.0) {
            return fail(MrStatus::InvalidInput, format!("theta norm must be nonnegative, got {theta_norm}"));
        }
        *out = rho_var(q.abs_z, theta_norm, zeta);
        MrStatus::Ok
    })
}

/// Largest admissible exposure norm under the ES bound.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_rho_es(theta_norm: f64, alpha: f64, zeta: f64, out: *mut f64) -> MrStatus {
    guard(|| {
        non_null!(out);
        if let Err(e) = RiskSpec::new(RiskKind::Es, alpha, zeta) {
            return fail_with(&e);
        }
        match PsiFunction::new(theta_norm, alpha).and_then(|p| p.root(zeta)) {
            Ok(r) => {
                *out = r;
                MrStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Monte Carlo estimate of the optimal expected utility with its standard
/// error, from exact sampling on `n_steps` equal steps.
///
/// # Safety
/// `p` must be a live problem handle; `mean` and `std_error` writable.
#[no_mangle]
pub unsafe extern "C" fn mr_simulate_cost(
    p: *const MrProblem,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    mean: *mut f64,
    std_error: *mut f64,
) -> MrStatus {
    guard(|| {
        non_null!(p, mean, std_error);
        let p = &(*p).inner;
        let run = || -> merton_risk::Result<_> {
            let sol = p.solve()?;
            let cfg = SimConfig::uniform(p.market.horizon(), n_steps, n_paths, seed);
            let ens = match &sol.controls {
                Controls::Deterministic(s) => simulate_deterministic(&p.market, s, p.x0(), &cfg)?,
                Controls::Feedback(f) => simulate_feedback(&p.market, f, &cfg)?,
                Controls::None => return Err(Error::UnsupportedRegime("the value is unbounded".into())),
            };
            ens.estimate_cost(p.utility())
        };
        match run() {
            Ok(est) => {
                *mean = est.mean;
                *std_error = est.std_error;
                MrStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// HJB residual check of the unconstrained value function on an `nt × nx`
/// grid over wealth `[x_lo, x_hi]`. Writes the largest relative residual and
/// the terminal error; `*passed` is 1 when all tolerances hold.
///
/// # Safety
/// `p` must be a live problem handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_hjb_verify(
    p: *const MrProblem,
    nt: usize,
    nx: usize,
    x_lo: f64,
    x_hi: f64,
    max_rel_residual: *mut f64,
    terminal_error: *mut f64,
    passed: *mut i32,
) -> MrStatus {
    guard(|| {
        non_null!(p, max_rel_residual, terminal_error, passed);
        let p = &(*p).inner;
        let run = || -> merton_risk::Result<_> {
            let grid = HjbGrid::off_breakpoints(&p.market, nt, nx, x_lo, x_hi)?;
            let c = HaraCoefficients::new(&p.market, p.utility())?;
            hjb::verify(&p.market, c, &grid, 4, 0, &HjbTolerances::default())
        };
        match run() {
            Ok(r) => {
                *max_rel_residual = r.max_rel_residual;
                *terminal_error = r.terminal_error;
                *passed = r.passed as i32;
                MrStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}
