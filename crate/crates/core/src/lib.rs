//! Closed-form optimal consumption and investment in Black–Scholes markets
//! with deterministic coefficients, with and without uniform Value-at-Risk
//! or Expected-Shortfall constraints, together with independent checks of
//! every solution.

pub mod error;
pub mod es;
pub mod gaussian;
pub mod hjb;
pub mod market;
pub mod monte_carlo;
pub mod oracle;
pub mod path;
pub mod problem;
pub mod quadrature;
pub mod risk;
pub mod roots;
pub mod solution;
pub mod strategy;
pub mod tight;
pub mod unconstrained;
pub mod var;

pub use error::{Error, Result};
