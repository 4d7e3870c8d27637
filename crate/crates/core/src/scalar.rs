//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real floating-point scalar the model math is written against.
///
/// Implemented for `f32` and `f64`. Training defaults to `f64`; the
/// gradient-check tolerances in the test suite assume double precision.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or config value.
    fn cast(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn cast(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn cast(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: Real>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin<S: Real>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_low() {
        assert_eq!(argmax(&[0.25f64, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmin(&[0.5f64, 0.2, 0.2, 0.1, 0.1]), 3);
        assert_eq!(argmax(&[0.1f32, 0.7, 0.7]), 1);
    }
}
