//! Scalar abstraction shared by plain evaluation and reverse-mode differentiation.
//!
//! Every numeric routine in the crate (inference, activation linearization, bound
//! propagation, envelope distances) is written once against [`Real`]. With `f64` it
//! runs as ordinary floating point; with [`crate::autodiff::Var`] it records a tape
//! so the same code path yields parameter gradients. Branches (case splits, sorting,
//! active sets) always test [`Real::value`], which fixes the subgradient convention:
//! the branch taken at the current point is frozen during differentiation.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
{
    /// Lifts a constant; carries no gradient.
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn atan(self) -> Self;
    fn sigmoid(self) -> Self;
    fn abs(self) -> Self;
    fn powf(self, exponent: f64) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    fn is_finite(self) -> bool {
        self.value().is_finite()
    }

    /// Larger of the two by value; ties keep `self`.
    fn max_by_value(self, other: Self) -> Self {
        if other.value() > self.value() {
            other
        } else {
            self
        }
    }

    fn min_by_value(self, other: Self) -> Self {
        if other.value() < self.value() {
            other
        } else {
            self
        }
    }

    /// `max(0, self)` with derivative 0 at the kink.
    fn relu(self) -> Self {
        if self.value() > 0.0 {
            self
        } else {
            Self::zero()
        }
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn atan(self) -> Self {
        f64::atan(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn powf(self, exponent: f64) -> Self {
        f64::powf(self, exponent)
    }
}

/// Sum of a sequence, starting from an exact zero.
pub fn sum<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let mut acc = T::zero();
    for v in values {
        acc += v;
    }
    acc
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}

/// Dot product against constant coefficients.
pub fn dot_const<T: Real>(a: &[T], b: &[f64]) -> T {
    debug_assert_eq!(a.len(), b.len());
    sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}
