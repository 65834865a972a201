//! Scalar abstraction for the numerical core.
//!
//! Everything in this crate is generic over [`Real`], a floating-point
//! trait built on `num-traits`. The crate root exports `f64` aliases for
//! the main types; `f32` works too but the default tolerances assume
//! double precision.

use std::fmt;
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar used throughout the crate.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + Sum<Self>
    + for<'a> Sum<&'a Self>
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Parse a decimal literal.
    fn parse(text: &str) -> Option<Self>;

    /// Format with enough digits to round-trip the value exactly.
    fn format_full(self) -> String;

    /// Convert a finite `f64` constant.
    #[inline]
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant")
    }

    /// Convert a count.
    #[inline]
    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("count fits in scalar")
    }
}

impl Real for f64 {
    fn parse(text: &str) -> Option<Self> {
        text.trim().parse().ok()
    }

    fn format_full(self) -> String {
        // 17 significant digits: lossless for f64.
        format!("{:.16e}", self)
    }
}

impl Real for f32 {
    fn parse(text: &str) -> Option<Self> {
        text.trim().parse().ok()
    }

    fn format_full(self) -> String {
        format!("{:.8e}", self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_round_trips() {
        let values = [0.1f64, -3.25e-17, 1.0 / 3.0, 2.0f64.sqrt(), 1e8];
        for &v in &values {
            let s = v.format_full();
            let back = f64::parse(&s).unwrap();
            assert_eq!(v, back, "{s}");
        }
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(f64::parse("not a number").is_none());
        assert!(f64::parse("").is_none());
    }
}
