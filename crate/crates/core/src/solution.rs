//! Solver outputs.

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::market::Market;
use crate::strategy::{DeterministicStrategy, StrategySpec};
use crate::unconstrained::HaraFeedback;

/// One hypothesis of a closed-form result with its numeric slack.
///
/// `margin >= 0` means the hypothesis holds; the magnitude is how far the
/// inputs are from the boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: &'static str,
    pub satisfied: bool,
    #[serde(serialize_with = "serialize_margin")]
    pub margin: f64,
}

/// JSON has no infinities; write them as `"inf"` / `"-inf"`.
fn serialize_margin<S: Serializer>(m: &f64, s: S) -> Result<S::Ok, S::Error> {
    if m.is_finite() {
        s.serialize_f64(*m)
    } else if m.is_nan() {
        s.serialize_str("nan")
    } else if *m > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

impl Condition {
    pub fn from_margin(name: &'static str, margin: f64) -> Self {
        Self {
            name,
            satisfied: margin >= 0.0,
            margin,
        }
    }

    /// For strict inequalities: satisfied only when `margin > 0`.
    pub fn strict(name: &'static str, margin: f64) -> Self {
        Self {
            name,
            satisfied: margin > 0.0,
            margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    UnconstrainedLinear,
    UnconstrainedHara,
    UnconstrainedEqualGamma,
    VarLinear,
    VarLoose,
    VarTight,
    EsLinear,
    EsLoose,
    EsTight,
}

impl Regime {
    pub fn tag(self) -> &'static str {
        match self {
            Regime::UnconstrainedLinear => "unconstrained-linear",
            Regime::UnconstrainedHara => "unconstrained-hara",
            Regime::UnconstrainedEqualGamma => "unconstrained-equal-gamma",
            Regime::VarLinear => "var-linear",
            Regime::VarLoose => "var-loose",
            Regime::VarTight => "var-tight",
            Regime::EsLinear => "es-linear",
            Regime::EsLoose => "es-loose",
            Regime::EsTight => "es-tight",
        }
    }
}

impl Serialize for Regime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Finite(f64),
    Unbounded,
}

impl Value {
    pub fn finite(self) -> Option<f64> {
        match self {
            Value::Finite(v) => Some(v),
            Value::Unbounded => None,
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Finite(v) => s.serialize_f64(*v),
            Value::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Controls {
    /// Exposure and consumption rate fixed in advance.
    Deterministic(DeterministicStrategy),
    /// Exposure and consumption depending on current wealth.
    Feedback(HaraFeedback),
    /// No optimizer exists (unbounded value).
    None,
}

impl Serialize for Controls {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(None)?;
        match self {
            Controls::Deterministic(st) => {
                m.serialize_entry("kind", "deterministic")?;
                let spec: StrategySpec = st.to_spec();
                m.serialize_entry("strategy", &spec)?;
            }
            Controls::Feedback(f) => {
                m.serialize_entry("kind", "feedback")?;
                m.serialize_entry("gamma1", &f.coefficients().gamma1())?;
                m.serialize_entry("gamma2", &f.coefficients().gamma2())?;
                m.serialize_entry("g0", &f.g0())?;
                m.serialize_entry("a1_0", &f.coefficients().a1(0.0))?;
                m.serialize_entry("a2_0", &f.coefficients().a2(0.0))?;
            }
            Controls::None => {
                m.serialize_entry("kind", "none")?;
            }
        }
        m.end()
    }
}

/// How the optimal wealth evolves.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WealthLaw {
    /// `ln X_t` Gaussian with mean `ln x + R - V + (y,θ) - ½‖y‖²` and
    /// variance `‖y‖²` from the deterministic controls.
    Lognormal { x0: f64 },
    /// `X_t = A₁(t) g₀^{-q₁} e^{-q₁ξ_t} + A₂(t) g₀^{-q₂} e^{-q₂ξ_t}` with
    /// Gaussian `ξ_t`.
    HaraFeedback { x0: f64, g0: f64, q1: f64, q2: f64 },
    /// Deterministic wealth `x e^{R_t} (N_T - ζ N_t) / N_T`, with
    /// `N_t = ∫_0^t ĝ^q`.
    Riskless { x0: f64, zeta: f64, terminal: f64 },
    /// No optimizer exists.
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    pub value: Value,
    pub regime: Regime,
    pub x0: f64,
    pub conditions: Vec<Condition>,
    pub notes: Vec<String>,
    pub controls: Controls,
    pub wealth_law: WealthLaw,
}

/// One row of a control curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSample {
    pub t: f64,
    pub pi: Vec<f64>,
    pub v: f64,
}

impl Solution {
    pub fn value(&self) -> Option<f64> {
        self.value.finite()
    }

    pub fn strategy(&self) -> Option<&DeterministicStrategy> {
        match &self.controls {
            Controls::Deterministic(s) => Some(s),
            _ => None,
        }
    }

    pub fn feedback(&self) -> Option<&HaraFeedback> {
        match &self.controls {
            Controls::Feedback(f) => Some(f),
            _ => None,
        }
    }

    /// Portfolio weights and consumption rate on `times`. Feedback controls
    /// are evaluated along the path on which the Gaussian driver `ξ` sits at
    /// its mean.
    pub fn control_curve(&self, market: &Market, times: &[f64]) -> Vec<ControlSample> {
        times
            .iter()
            .map(|&t| match &self.controls {
                Controls::Deterministic(s) => ControlSample {
                    t,
                    pi: market.pi_from_y(t, s.exposure_at(t)),
                    v: s.consumption_rate(t),
                },
                Controls::Feedback(f) => {
                    let x = f.wealth_at_mean_driver(market, t);
                    let y = f.exposure(market, t, x);
                    ControlSample {
                        t,
                        pi: market.pi_from_y(t, &y),
                        v: f.consumption(t, x) / x,
                    }
                }
                Controls::None => ControlSample {
                    t,
                    pi: vec![f64::NAN; market.dim()],
                    v: f64::NAN,
                },
            })
            .collect()
    }
}
