use thiserror::Error;

use crate::solution::Condition;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("volatility matrix on the piece starting at t={t0} is singular (reciprocal condition {rcond:.3e})")]
    SingularVolatility { t0: f64, rcond: f64 },

    #[error("coefficient paths disagree: {0}")]
    MismatchedPaths(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("quantile level {0} outside (0, 1/2)")]
    AlphaOutOfRange(f64),

    #[error("negative argument {0}")]
    NegativeArgument(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative interest rate {rate} on the piece starting at t={t0}")]
    NegativeRate { t0: f64, rate: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    ConvergenceFailure {
        what: &'static str,
        iterations: usize,
    },

    #[error("hypotheses of the {regime} solution violated: {}", describe(.conditions))]
    ConditionViolated {
        regime: &'static str,
        conditions: Vec<Condition>,
    },

    #[error("no closed-form regime applies: {}", describe(.conditions))]
    NoClosedFormRegime { conditions: Vec<Condition> },

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("tail monotonicity requires |z_alpha| >= 2 ||theta||_T, got |z_alpha|={abs_z} and ||theta||_T={theta_norm}")]
    HypothesisViolated { abs_z: f64, theta_norm: f64 },

    #[error("no candidate in the search family satisfies the risk constraint")]
    EmptyFeasibleSet,

    #[error("{n_paths} paths at alpha={alpha} leave fewer than 100 tail samples")]
    InsufficientPaths { n_paths: usize, alpha: f64 },

    #[error("grid node t={t} coincides with a coefficient breakpoint")]
    GridTouchesBreakpoint { t: f64 },
}

impl Error {
    /// Errors that describe the problem's regime rather than malformed input.
    pub fn is_regime_outcome(&self) -> bool {
        matches!(
            self,
            Error::ConditionViolated { .. }
                | Error::NoClosedFormRegime { .. }
                | Error::UnsupportedRegime(_)
                | Error::HypothesisViolated { .. }
                | Error::InsufficientPaths { .. }
                | Error::EmptyFeasibleSet
        )
    }

    /// Machine-readable reason tag.
    pub fn reason(&self) -> &'static str {
        match self {
            Error::SingularVolatility { .. } => "singular_volatility",
            Error::MismatchedPaths(_) => "mismatched_paths",
            Error::InvalidPath(_) => "invalid_path",
            Error::TimeOutOfRange { .. } => "time_out_of_range",
            Error::AlphaOutOfRange(_) => "alpha_out_of_range",
            Error::NegativeArgument(_) => "negative_argument",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NegativeRate { .. } => "negative_rate",
            Error::ConvergenceFailure { .. } => "convergence_failure",
            Error::ConditionViolated { .. } => "condition_violated",
            Error::NoClosedFormRegime { .. } => "no_closed_form_regime",
            Error::UnsupportedRegime(_) => "unsupported_regime",
            Error::HypothesisViolated { .. } => "hypothesis_violated",
            Error::EmptyFeasibleSet => "empty_feasible_set",
            Error::InsufficientPaths { .. } => "insufficient_paths",
            Error::GridTouchesBreakpoint { .. } => "grid_touches_breakpoint",
        }
    }

    pub fn conditions(&self) -> &[Condition] {
        match self {
            Error::ConditionViolated { conditions, .. } | Error::NoClosedFormRegime { conditions } => {
                conditions
            }
            _ => &[],
        }
    }
}

fn describe(conditions: &[Condition]) -> String {
    conditions
        .iter()
        .map(|c| {
            format!(
                "{}={} (margin {:.6e})",
                c.name,
                if c.satisfied { "ok" } else { "failed" },
                c.margin
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}
