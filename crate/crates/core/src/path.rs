//! Piecewise-constant paths on `[0, T]` and their exact piecewise-linear
//! antiderivatives.
//!
//! Breakpoints are stored as integer ticks of 1e-9 years so that paths with
//! independently specified breakpoints merge without floating-point
//! ambiguity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ticks per year.
pub const TICKS_PER_YEAR: f64 = 1e9;

/// A time expressed as an integer number of 1e-9 year ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tick(pub i64);

impl Tick {
    pub const ZERO: Tick = Tick(0);

    pub fn from_years(t: f64) -> Tick {
        Tick((t * TICKS_PER_YEAR).round() as i64)
    }

    pub fn years(self) -> f64 {
        self.0 as f64 / TICKS_PER_YEAR
    }
}

/// One piece of a path as it appears in JSON documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece<T> {
    pub t0: f64,
    pub value: T,
}

/// A right-continuous step function on `[0, T]`.
///
/// Piece `i` covers `[starts[i], starts[i + 1])`; the last piece closes at
/// the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath<T> {
    starts: Vec<Tick>,
    values: Vec<T>,
    horizon: Tick,
}

impl<T: Clone> StepPath<T> {
    pub fn new(starts: Vec<Tick>, values: Vec<T>, horizon: Tick) -> Result<Self> {
        if starts.is_empty() || starts.len() != values.len() {
            return Err(Error::InvalidPath(format!(
                "{} breakpoints for {} values",
                starts.len(),
                values.len()
            )));
        }
        if starts[0] != Tick::ZERO {
            return Err(Error::InvalidPath(format!(
                "first breakpoint must be 0, got {}",
                starts[0].years()
            )));
        }
        if horizon <= Tick::ZERO {
            return Err(Error::InvalidPath(format!(
                "horizon must be positive, got {}",
                horizon.years()
            )));
        }
        for w in starts.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidPath(format!(
                    "breakpoints not strictly increasing at {}",
                    w[1].years()
                )));
            }
        }
        if *starts.last().unwrap() >= horizon {
            return Err(Error::InvalidPath(format!(
                "breakpoint {} does not lie before the horizon {}",
                starts.last().unwrap().years(),
                horizon.years()
            )));
        }
        Ok(Self {
            starts,
            values,
            horizon,
        })
    }

    pub fn constant(value: T, horizon: f64) -> Result<Self> {
        Self::new(vec![Tick::ZERO], vec![value], Tick::from_years(horizon))
    }

    pub fn from_pieces(pieces: &[Piece<T>], horizon: f64) -> Result<Self> {
        let starts = pieces.iter().map(|p| Tick::from_years(p.t0)).collect();
        let values = pieces.iter().map(|p| p.value.clone()).collect();
        Self::new(starts, values, Tick::from_years(horizon))
    }

    pub fn to_pieces(&self) -> Vec<Piece<T>> {
        self.starts
            .iter()
            .zip(&self.values)
            .map(|(s, v)| Piece {
                t0: s.years(),
                value: v.clone(),
            })
            .collect()
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> StepPath<U> {
        StepPath {
            starts: self.starts.clone(),
            values: self.values.iter().map(f).collect(),
            horizon: self.horizon,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.years()
    }

    pub fn horizon_tick(&self) -> Tick {
        self.horizon
    }

    pub fn starts(&self) -> &[Tick] {
        &self.starts
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the piece containing tick `t` (right-continuous).
    pub fn index_at_tick(&self, t: Tick) -> usize {
        self.starts.partition_point(|s| *s <= t).saturating_sub(1)
    }

    pub fn index_at(&self, t: f64) -> usize {
        self.index_at_tick(Tick::from_years(t))
    }

    pub fn value_at(&self, t: f64) -> &T {
        &self.values[self.index_at(t)]
    }

    pub fn value_at_tick(&self, t: Tick) -> &T {
        &self.values[self.index_at_tick(t)]
    }

    /// Interior breakpoints, i.e. every start except 0.
    pub fn interior_breaks(&self) -> impl Iterator<Item = Tick> + '_ {
        self.starts.iter().skip(1).copied()
    }
}

/// Sorted union of breakpoints with `0` and the horizon included.
pub fn merge_knots<'a>(sets: impl IntoIterator<Item = &'a [Tick]>, horizon: Tick) -> Vec<Tick> {
    let mut all: Vec<Tick> = vec![Tick::ZERO, horizon];
    for s in sets {
        all.extend(s.iter().copied().filter(|t| *t < horizon));
    }
    all.sort_unstable();
    all.dedup();
    all
}

/// `(e^x - 1) / x`, continuous at zero.
pub fn exprel(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + 0.5 * x
    } else {
        x.exp_m1() / x
    }
}

/// A continuous piecewise-linear function given by knot values and
/// per-interval slopes. The last slope extends to the right end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Ramp {
    /// Antiderivative of a step function that starts from zero.
    ///
    /// `knots` includes 0 and the horizon; `rates[i]` applies on
    /// `[knots[i], knots[i + 1])`.
    pub fn integrate(knots: &[f64], rates: &[f64]) -> Ramp {
        debug_assert_eq!(knots.len(), rates.len() + 1);
        let mut values = Vec::with_capacity(knots.len());
        let mut acc = 0.0;
        values.push(0.0);
        for (i, rate) in rates.iter().enumerate() {
            acc += rate * (knots[i + 1] - knots[i]);
            values.push(acc);
        }
        Ramp {
            knots: knots.to_vec(),
            values,
            slopes: rates.to_vec(),
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }

    /// Value at the right end.
    pub fn end_value(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn end(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.slopes.len();
        self.knots.partition_point(|k| *k <= t).clamp(1, n) - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        self.values[i] + self.slopes[i] * (t - self.knots[i])
    }

    /// Slope of the segment containing `t` (right derivative).
    pub fn slope_at(&self, t: f64) -> f64 {
        self.slopes[self.segment(t)]
    }

    /// `a * self + b * other`; both ramps must share knots.
    pub fn combine(&self, a: f64, other: &Ramp, b: f64) -> Ramp {
        debug_assert_eq!(self.knots.len(), other.knots.len());
        Ramp {
            knots: self.knots.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            slopes: self
                .slopes
                .iter()
                .zip(&other.slopes)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Ramp {
        Ramp {
            knots: self.knots.clone(),
            values: self.values.iter().map(|v| a * v).collect(),
            slopes: self.slopes.iter().map(|s| a * s).collect(),
        }
    }

    /// Re-expresses the ramp on a finer knot set that contains its own knots.
    pub fn refine(&self, knots: &[f64]) -> Ramp {
        let n = knots.len();
        let values = knots.iter().map(|t| self.eval(*t)).collect();
        let slopes = knots[..n - 1]
            .iter()
            .map(|t| self.slope_at(*t))
            .collect();
        Ramp {
            knots: knots.to_vec(),
            values,
            slopes,
        }
    }

    /// Exact `∫_a^b exp(self(u)) du` for `0 <= a <= b <= end`.
    pub fn exp_integral(&self, a: f64, b: f64) -> f64 {
        self.exp_integral_shifted(a, b, 0.0)
    }

    /// Exact `∫_a^b exp(self(u) - shift) du`; the shift keeps large
    /// exponents representable.
    pub fn exp_integral_shifted(&self, a: f64, b: f64, shift: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut i = self.segment(a);
        let mut lo = a;
        loop {
            let seg_end = if i + 1 < self.slopes.len() {
                self.knots[i + 1]
            } else {
                f64::INFINITY
            };
            let hi = b.min(seg_end);
            let h = hi - lo;
            if h > 0.0 {
                let v0 = self.values[i] + self.slopes[i] * (lo - self.knots[i]) - shift;
                total += v0.exp() * h * exprel(self.slopes[i] * h);
            }
            if hi >= b {
                break;
            }
            lo = hi;
            i += 1;
        }
        total
    }

    /// Exact `∫_0^t exp(self(u)) du` at every knot.
    pub fn exp_integral_at_knots(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.knots.len());
        let mut acc = 0.0;
        out.push(0.0);
        for i in 0..self.slopes.len() {
            let h = self.knots[i + 1] - self.knots[i];
            acc += self.values[i].exp() * h * exprel(self.slopes[i] * h);
            out.push(acc);
        }
        out
    }
}
