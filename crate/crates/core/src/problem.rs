//! Problem files: market, utility, optional risk bound and endowment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::es::solve_es;
use crate::market::{Market, MarketSpec};
use crate::risk::{RiskKind, RiskSpec};
use crate::solution::Solution;
use crate::unconstrained::{solve_unconstrained, UtilityParams};
use crate::var::solve_var;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub market: MarketSpec,
    pub utility: UtilityParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskSpec>,
    pub x0: f64,
    /// Artifacts to write; empty means all that apply.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return Err(Error::InvalidParameter(format!("x0 must be positive, got {}", self.x0)));
        }
        self.utility.validate()?;
        if let Some(r) = &self.risk {
            r.validate()?;
        }
        Ok(())
    }

    pub fn wants(&self, artifact: &str) -> bool {
        self.outputs.is_empty() || self.outputs.iter().any(|o| o == artifact)
    }
}

/// A validated problem with its market built.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub market: Market,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let market = Market::from_spec(&spec.market)?;
        Ok(Self { spec, market })
    }

    pub fn utility(&self) -> UtilityParams {
        self.spec.utility
    }

    pub fn risk(&self) -> Option<&RiskSpec> {
        self.spec.risk.as_ref()
    }

    pub fn x0(&self) -> f64 {
        self.spec.x0
    }

    pub fn solve(&self) -> Result<Solution> {
        solve(&self.market, self.spec.utility, self.spec.risk.as_ref(), self.spec.x0)
    }
}

/// Dispatches to the unconstrained, VaR or ES solver.
pub fn solve(market: &Market, utility: UtilityParams, risk: Option<&RiskSpec>, x: f64) -> Result<Solution> {
    match risk {
        None => solve_unconstrained(market, utility, x),
        Some(spec) if spec.kind == RiskKind::Var => solve_var(market, utility, spec, x),
        Some(spec) => solve_es(market, utility, spec, x),
    }
}
