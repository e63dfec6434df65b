//! Extended-real arithmetic on ℝ ∪ {−∞}.
//!
//! Barrier and action-value entries live in this type. `-inf` is an
//! absorbing element under every arithmetic operation, so a condemned
//! state-action pair can never be rehabilitated by a later blend, and
//! the `0 · ∞`-style indeterminations of IEEE arithmetic cannot arise:
//! there is no `NaN` and no `+inf` representable.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;

use rand::Rng;

/// A real number extended with negative infinity.
///
/// Exactly one of the two variants holds; `Finite` always carries a
/// finite `f64` (enforced at construction).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
}

pub use ExtReal::NegInf;

impl ExtReal {
    /// Zero, the additive identity.
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    /// Wraps a finite value.
    ///
    /// Panics if `value` is NaN or infinite; those are unrepresentable
    /// by contract.
    pub fn finite(value: f64) -> ExtReal {
        assert!(value.is_finite(), "ExtReal::finite requires a finite value, got {value}");
        ExtReal::Finite(value)
    }

    pub fn is_neg_inf(self) -> bool {
        matches!(self, ExtReal::NegInf)
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    /// The finite value, if any.
    pub fn as_finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::NegInf => None,
        }
    }

    /// Convex blend `(1 - eta) * self + eta * target` with `-inf` absorbing:
    /// if either operand is `-inf` the result is `-inf`.
    ///
    /// Panics if `eta` is outside `(0, 1]`.
    pub fn blend(self, target: ExtReal, eta: f64) -> ExtReal {
        assert!(
            eta > 0.0 && eta <= 1.0,
            "blend rate must lie in (0, 1], got {eta}"
        );
        match (self, target) {
            (ExtReal::Finite(old), ExtReal::Finite(new)) => {
                ExtReal::finite((1.0 - eta) * old + eta * new)
            }
            _ => ExtReal::NegInf,
        }
    }

    /// Scales by a strictly positive factor; `-inf` stays `-inf`.
    ///
    /// Panics if `factor <= 0` (scaling `-inf` by zero is indeterminate).
    pub fn scale(self, factor: f64) -> ExtReal {
        assert!(factor > 0.0, "scale factor must be positive, got {factor}");
        match self {
            ExtReal::Finite(v) => ExtReal::finite(factor * v),
            ExtReal::NegInf => ExtReal::NegInf,
        }
    }
}

impl Add for ExtReal {
    type Output = ExtReal;

    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::finite(a + b),
            _ => ExtReal::NegInf,
        }
    }
}

// NaN is unrepresentable, so the partial order on f64 is total here.
impl Eq for ExtReal {}

impl Ord for ExtReal {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ExtReal::NegInf, ExtReal::NegInf) => Ordering::Equal,
            (ExtReal::NegInf, ExtReal::Finite(_)) => Ordering::Less,
            (ExtReal::Finite(_), ExtReal::NegInf) => Ordering::Greater,
            (ExtReal::Finite(a), ExtReal::Finite(b)) => {
                a.partial_cmp(b).expect("finite values always compare")
            }
        }
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => write!(f, "-inf"),
            ExtReal::Finite(v) => write!(f, "{v}"),
        }
    }
}

/// Index of a maximal entry, ties broken uniformly at random.
///
/// Consumes randomness only when two or more entries tie for the
/// maximum. Returns `None` on an empty slice. A slice of all `-inf`
/// still has an argmax.
pub fn argmax_tiebreak<R: Rng + ?Sized>(values: &[ExtReal], rng: &mut R) -> Option<usize> {
    let best = *values.iter().max()?;
    let mut ties = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .map(|(i, _)| i);
    let first = ties.next().expect("max came from the slice");
    let rest: Vec<usize> = ties.collect();
    if rest.is_empty() {
        return Some(first);
    }
    let pick = rng.gen_range(0..rest.len() + 1);
    Some(if pick == 0 { first } else { rest[pick - 1] })
}
