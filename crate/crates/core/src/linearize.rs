//! Shared-slope linear enclosures `d·x + l ≤ σ(x) ≤ d·x + h` of an activation
//! over an interval, in closed form so they can be differentiated.
//!
//! ReLU uses the three-case triangle relaxation. Sigmoid, tanh and arctan take the
//! chord slope; the convex/concave side is bounded by the chord itself and the
//! crossing side by the tangent line of the same slope, touching at `t₁ < 0 < t₂`.

use crate::error::{Error, Result};
use crate::model::Activation;
use crate::scalar::Real;

/// Chord widths below this use the point enclosure.
pub const DEGENERATE_WIDTH: f64 = 1e-9;
/// Chord slopes this close to the maximum slope use the point enclosure.
pub const MAX_SLOPE_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linearization<T> {
    pub slope: T,
    pub lower: T,
    pub upper: T,
}

impl<T: Real> Linearization<T> {
    fn constant(slope: f64, lower: f64, upper: f64) -> Self {
        Linearization {
            slope: T::constant(slope),
            lower: T::constant(lower),
            upper: T::constant(upper),
        }
    }

    pub fn width(&self) -> f64 {
        self.upper.value() - self.lower.value()
    }
}

/// Per-neuron coefficients of one layer: the diagonal `D` and intercept vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerLinearization<T> {
    pub slope: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> LayerLinearization<T> {
    pub fn len(&self) -> usize {
        self.slope.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slope.is_empty()
    }
}

pub fn linearize_activation<T: Real>(kind: Activation, lo: T, hi: T) -> Result<Linearization<T>> {
    let (a, b) = (lo.value(), hi.value());
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "linearization interval must be finite, got [{a}, {b}]"
        )));
    }
    if b < a {
        return Err(Error::InvalidArgument(format!(
            "linearization interval is reversed: [{a}, {b}]"
        )));
    }
    Ok(match kind {
        Activation::Relu => relu(lo, hi),
        _ => s_shaped(kind, lo, hi),
    })
}

pub fn linearize_layer<T: Real>(kind: Activation, lo: &[T], hi: &[T]) -> Result<LayerLinearization<T>> {
    let mut out = LayerLinearization {
        slope: Vec::with_capacity(lo.len()),
        lower: Vec::with_capacity(lo.len()),
        upper: Vec::with_capacity(lo.len()),
    };
    for (&l, &h) in lo.iter().zip(hi) {
        let lin = linearize_activation(kind, l, h)?;
        out.slope.push(lin.slope);
        out.lower.push(lin.lower);
        out.upper.push(lin.upper);
    }
    Ok(out)
}

fn relu<T: Real>(lo: T, hi: T) -> Linearization<T> {
    if hi.value() <= 0.0 {
        Linearization::constant(0.0, 0.0, 0.0)
    } else if lo.value() >= 0.0 {
        Linearization::constant(1.0, 0.0, 0.0)
    } else {
        let width = hi - lo;
        Linearization {
            slope: hi / width,
            lower: T::zero(),
            upper: -(lo * hi) / width,
        }
    }
}

fn s_shaped<T: Real>(kind: Activation, lo: T, hi: T) -> Linearization<T> {
    let width = hi - lo;
    if width.value() < DEGENERATE_WIDTH {
        return point_enclosure(kind, lo, hi);
    }
    let (s_lo, s_hi) = (kind.apply(lo), kind.apply(hi));
    let slope = rise(kind, lo, hi, s_lo, s_hi) / width;
    let d = slope.value();
    if d >= kind.max_slope() - MAX_SLOPE_GUARD {
        return point_enclosure(kind, lo, hi);
    }
    let chord = s_lo - lo * slope;
    let t2 = tangent_point(kind, slope);
    if !(d > 0.0) || !t2.is_finite() {
        // Both ends saturated to the same float; monotonicity alone bounds σ.
        return Linearization {
            slope: T::zero(),
            lower: s_lo,
            upper: s_hi,
        };
    }
    let t1 = -t2;
    let lower = if lo.value() < 0.0 {
        kind.apply(t1) - t1 * slope
    } else {
        chord
    };
    let upper = if hi.value() > 0.0 {
        kind.apply(t2) - t2 * slope
    } else {
        chord
    };
    Linearization {
        slope,
        lower,
        upper,
    }
}

/// `σ(hi) − σ(lo)` without cancellation on narrow intervals.
fn rise<T: Real>(kind: Activation, lo: T, hi: T, s_lo: T, s_hi: T) -> T {
    let cosh = |x: T| ((x).exp() + (-x).exp()) * 0.5;
    let tanh_rise = |a: T, b: T| (b - a).tanh() * cosh(b - a) / (cosh(a) * cosh(b));
    let (a, b) = (lo.value(), hi.value());
    match kind {
        Activation::Tanh if a.abs().max(b.abs()) < 300.0 => tanh_rise(lo, hi),
        Activation::Sigmoid if a.abs().max(b.abs()) < 600.0 => tanh_rise(lo * 0.5, hi * 0.5) * 0.5,
        Activation::Arctan if a * b >= 0.0 => ((hi - lo) / (lo * hi + 1.0)).atan(),
        _ => s_hi - s_lo,
    }
}

/// Positive point `t₂` with `σ′(t₂) = d`. All three functions have an even
/// derivative, so the negative tangent point is `t₁ = −t₂`; the forms below are
/// the cancellation-free versions of the tabulated logarithms.
fn tangent_point<T: Real>(kind: Activation, d: T) -> T {
    let one = T::constant(1.0);
    match kind {
        Activation::Sigmoid => {
            let root = (one - d * 4.0).relu().sqrt_or_zero();
            ((one - d * 2.0 + root) / (d * 2.0)).ln()
        }
        Activation::Tanh => {
            let root = (one - d).relu().sqrt_or_zero();
            ((T::constant(2.0) - d + root * 2.0) / d).ln() * 0.5
        }
        Activation::Arctan => (one / d - 1.0).relu().sqrt_or_zero(),
        Activation::Relu => unreachable!("relu has no tangent construction"),
    }
}

/// Tangent at the midpoint, widened by the Taylor remainder `M·w²/8` so it stays
/// an enclosure. For `lo == hi` this is the exact point enclosure.
fn point_enclosure<T: Real>(kind: Activation, lo: T, hi: T) -> Linearization<T> {
    let mid = (lo + hi) * 0.5;
    let slope = kind.derivative(mid);
    let intercept = kind.apply(mid) - slope * mid;
    let w = (hi - lo).value();
    let slack = kind.curvature_bound() * w * w / 8.0;
    Linearization {
        slope,
        lower: intercept - slack,
        upper: intercept + slack,
    }
}

trait SqrtOrZero {
    fn sqrt_or_zero(self) -> Self;
}

impl<T: Real> SqrtOrZero for T {
    fn sqrt_or_zero(self) -> Self {
        if self.value() > 0.0 {
            self.sqrt()
        } else {
            T::zero()
        }
    }
}
