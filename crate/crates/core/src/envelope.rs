//! The polyhedral envelope certifier.
//!
//! The elided margin bounds `U_i·x′ + p_i ≥ 0` (one per rival class `i`) cut out a
//! polytope inside which the prediction cannot change, as long as the points also
//! lie in the budget the bounds were built for. The certified radius is the
//! smaller of `ε` and the distance from `x` to the nearest face.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{margin_bounds, Propagator};
use crate::error::{Error, Result};
use crate::model::{AdversarialBudget, Dataset, NeuralNetwork, Norm};
use crate::scalar::{dot_const, Real};

/// Cap on greedy clipping rounds.
pub const DEFAULT_GREEDY_ITERATIONS: usize = 20;
/// Residual below which `a·Δ + b ≤ 0` counts as satisfied.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-9;

/// Distance from `x` to the hyperplane `a·x′ + p = 0`, clamped at zero when `x`
/// already violates it. A zero `a` gives `+∞` for a positive margin, else 0.
pub fn unconstrained_distance<T: Real>(a: &[T], p: T, x: &[f64], norm: Norm) -> T {
    let margin = dot_const(a, x) + p;
    let scale = norm.dual_of(a);
    if scale.value() == 0.0 {
        return T::constant(if margin.value() > 0.0 { f64::INFINITY } else { 0.0 });
    }
    if margin.value() <= 0.0 {
        return T::zero();
    }
    margin / scale
}

/// Minimum-norm `Δ` with `a·Δ + b = 0`: `Δ_i = −b/‖a‖_q^q · sign(a_i)·|a_i|^{q/p}`.
pub fn holder_optimal_delta<T: Real>(a: &[T], b: T, norm: Norm) -> Result<Vec<T>> {
    let scale = norm.dual_of(a);
    if scale.value() == 0.0 {
        return Err(Error::InvalidArgument(
            "hyperplane normal is zero; no finite step reaches it".into(),
        ));
    }
    Ok(holder_step(a, b, scale, norm))
}

fn holder_step<T: Real>(a: &[T], b: T, dual_norm: T, norm: Norm) -> Vec<T> {
    match norm {
        Norm::Two => {
            let factor = b / (dual_norm * dual_norm);
            a.iter().map(|&ai| -(factor * ai)).collect()
        }
        Norm::Inf => {
            let factor = b / dual_norm;
            a.iter()
                .map(|ai| {
                    let v = ai.value();
                    if v > 0.0 {
                        -factor
                    } else if v < 0.0 {
                        factor
                    } else {
                        T::zero()
                    }
                })
                .collect()
        }
    }
}

#[derive(Clone, Debug)]
pub struct GreedyOutcome<T> {
    /// `‖Δ̂‖_p`, `+∞` when no box point satisfies the constraint.
    pub distance: T,
    pub delta: Vec<T>,
    /// `‖Δ̂‖_p` after the initial step and after every clipping round.
    pub round_distances: Vec<f64>,
    /// False when the round cap stopped the search; the distance is then a
    /// lower bound of the optimum.
    pub converged: bool,
    pub fixed: Vec<bool>,
}

/// Minimum `‖Δ‖_p` subject to `a·Δ + b ≤ 0` and `Δ_min ≤ Δ ≤ Δ_max`, by
/// repeatedly solving the unboxed problem on the free coordinates, clipping the
/// coordinates that leave the box and freezing them.
pub fn greedy_distance<T: Real>(
    a: &[T],
    b: T,
    delta_min: &[f64],
    delta_max: &[f64],
    norm: Norm,
    max_iter: usize,
) -> Result<GreedyOutcome<T>> {
    let n = a.len();
    if delta_min.len() != n || delta_max.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: delta_min.len().min(delta_max.len()),
        });
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let mut delta = vec![T::zero(); n];
    let mut fixed = vec![false; n];
    if b.value() <= 0.0 {
        return Ok(GreedyOutcome {
            distance: T::zero(),
            delta,
            round_distances: vec![0.0],
            converged: true,
            fixed,
        });
    }

    let infeasible = |delta: Vec<T>, fixed: Vec<bool>, mut rounds: Vec<f64>| {
        rounds.push(f64::INFINITY);
        GreedyOutcome {
            distance: T::constant(f64::INFINITY),
            delta,
            round_distances: rounds,
            converged: true,
            fixed,
        }
    };

    let mut rounds = Vec::new();
    let mut iteration = 0;
    loop {
        // Solve on the free coordinates with the fixed ones folded into b.
        let mut residual = b;
        for i in 0..n {
            if fixed[i] {
                residual += a[i] * delta[i];
            }
        }
        if residual.value() > CONSTRAINT_TOLERANCE {
            let free: Vec<T> = (0..n)
                .map(|i| if fixed[i] { T::zero() } else { a[i] })
                .collect();
            let scale = norm.dual_of(&free);
            if scale.value() == 0.0 {
                return Ok(infeasible(delta, fixed, rounds));
            }
            let step = holder_step(&free, residual, scale, norm);
            for i in 0..n {
                if !fixed[i] {
                    delta[i] = step[i];
                }
            }
        } else {
            for i in 0..n {
                if !fixed[i] {
                    delta[i] = T::zero();
                }
            }
        }
        rounds.push(norm.of(&delta).value());

        let violated: Vec<usize> = (0..n)
            .filter(|&i| {
                !fixed[i] && (delta[i].value() < delta_min[i] || delta[i].value() > delta_max[i])
            })
            .collect();
        if violated.is_empty() {
            return Ok(GreedyOutcome {
                distance: norm.of(&delta),
                delta,
                round_distances: rounds,
                converged: true,
                fixed,
            });
        }
        if iteration == max_iter {
            return Ok(GreedyOutcome {
                distance: norm.of(&delta),
                delta,
                round_distances: rounds,
                converged: false,
                fixed,
            });
        }
        for i in violated {
            delta[i] = T::constant(delta[i].value().clamp(delta_min[i], delta_max[i]));
            fixed[i] = true;
        }
        iteration += 1;
    }
}

pub fn constrained_distance<T: Real>(
    a: &[T],
    b: T,
    delta_min: &[f64],
    delta_max: &[f64],
    norm: Norm,
    max_iter: usize,
) -> Result<T> {
    Ok(greedy_distance(a, b, delta_min, delta_max, norm, max_iter)?.distance)
}

/// Box offsets `(r_min − x, r_max − x)` for an input inside the budget's box.
pub fn box_offsets(x: &[f64], budget: &AdversarialBudget) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let Some(bounds) = budget.bounds else {
        return Ok(None);
    };
    if !bounds.contains(x) {
        return Err(Error::InvalidArgument(format!(
            "input lies outside the box [{}, {}]",
            bounds.min, bounds.max
        )));
    }
    Ok(Some((
        x.iter().map(|v| bounds.min - v).collect(),
        x.iter().map(|v| bounds.max - v).collect(),
    )))
}

/// Distance to the hyperplane `a·Δ + b = 0`, negative when the anchor violates
/// `a·Δ + b ≥ 0`. With a box, the distance is measured inside the box.
///
/// A zero normal gives `+∞` for `b > 0` and 0 otherwise; a violating anchor
/// whose hyperplane is out of the box's reach falls back to the unboxed value.
pub fn signed_distance<T: Real>(
    a: &[T],
    b: T,
    offsets: Option<(&[f64], &[f64])>,
    norm: Norm,
    max_iter: usize,
) -> Result<T> {
    let scale = norm.dual_of(a);
    if scale.value() == 0.0 {
        return Ok(T::constant(if b.value() > 0.0 { f64::INFINITY } else { 0.0 }));
    }
    let Some((dmin, dmax)) = offsets else {
        return Ok(b / scale);
    };
    let bv = b.value();
    if bv == 0.0 {
        return Ok(T::zero());
    }
    if bv > 0.0 {
        return constrained_distance(a, b, dmin, dmax, norm, max_iter);
    }
    let flipped: Vec<T> = a.iter().map(|&v| -v).collect();
    let d = constrained_distance(&flipped, -b, dmin, dmax, norm, max_iter)?;
    if d.is_finite() {
        Ok(-d)
    } else {
        Ok(b / scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// `d_c ≥ ε`: the whole budget is certified.
    Full,
    /// `0 < d_c < ε`: a smaller ball is certified.
    Partial,
    /// Nothing certified.
    None,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Full => "full",
            Phase::Partial => "partial",
            Phase::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Phase::Full),
            "partial" => Ok(Phase::Partial),
            "none" => Ok(Phase::None),
            other => Err(Error::InvalidArgument(format!("unknown phase `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub index: usize,
    pub label: usize,
    pub prediction: usize,
    /// `min{ε, d_c}`, or 0 for a misclassified input.
    pub radius: f64,
    /// `d_c`, the distance to the envelope boundary.
    pub envelope_distance: f64,
    /// `d_ic` per class; the label's own entry is `+∞`.
    pub class_distances: Vec<f64>,
    pub phase: Phase,
    pub budget: AdversarialBudget,
}

impl Certificate {
    /// Radius a certifier without partial credit reports from the same bounds.
    pub fn binary_radius(&self) -> f64 {
        if self.phase == Phase::Full {
            self.budget.epsilon
        } else {
            0.0
        }
    }

    pub fn is_certified(&self) -> bool {
        self.phase == Phase::Full
    }
}

pub fn certify_point(
    net: &NeuralNetwork,
    x: &[f64],
    label: usize,
    budget: &AdversarialBudget,
    propagator: Propagator,
) -> Result<Certificate> {
    let k = net.num_classes();
    if label >= k {
        return Err(Error::InvalidLabel { label, classes: k });
    }
    net.check_input(x)?;
    let offsets = box_offsets(x, budget)?;
    let prediction = net.predict(x)?;
    let margins = margin_bounds::<f64>(net, x, label, budget, propagator)?;

    let mut class_distances = vec![f64::INFINITY; k];
    for (i, slot) in class_distances.iter_mut().enumerate() {
        if i == label {
            continue;
        }
        let a = margins.lower_coef.row(i);
        let p = margins.lower_offset[i];
        *slot = match &offsets {
            None => unconstrained_distance(a, p, x, budget.norm),
            Some((dmin, dmax)) => {
                let b = dot_const(a, x) + p;
                if budget.norm.dual_of(a) == 0.0 {
                    if b > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                } else {
                    constrained_distance(a, b, dmin, dmax, budget.norm, DEFAULT_GREEDY_ITERATIONS)?
                }
            }
        };
    }
    let envelope_distance = class_distances
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);

    let eps = budget.epsilon;
    let (radius, phase) = if prediction != label {
        (0.0, Phase::None)
    } else if envelope_distance >= eps {
        (eps, Phase::Full)
    } else if envelope_distance > 0.0 {
        (envelope_distance, Phase::Partial)
    } else {
        (0.0, Phase::None)
    };

    Ok(Certificate {
        index: 0,
        label,
        prediction,
        radius,
        envelope_distance,
        class_distances,
        phase,
        budget: *budget,
    })
}

/// Certifies every row; the output order follows the dataset.
pub fn certify_dataset(
    net: &NeuralNetwork,
    data: &Dataset,
    budget: &AdversarialBudget,
    propagator: Propagator,
) -> Result<Vec<Certificate>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut cert = certify_point(net, &data.inputs[i], data.labels[i], budget, propagator)?;
            cert.index = i;
            Ok(cert)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchOutcome {
    /// Midpoint of the final bracket.
    pub epsilon: f64,
    /// Number of certifier calls.
    pub iterations: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Bracket search for the largest certifiable radius. Each probe raises the
/// lower end to the certified radius and, when the probe falls short, drops the
/// upper end to the probe. A certifier with partial credit can move both ends
/// in one call.
pub fn search_with<F>(lo: f64, hi: f64, tol: f64, mut certify: F) -> Result<SearchOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "search interval must satisfy 0 <= lo < hi, got [{lo}, {hi}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let mut low = lo;
    let mut up = hi;
    let mut iterations = 0;
    // relative slack absorbs midpoint rounding on non-dyadic intervals
    let stop = tol * (1.0 + 1e-9);
    while up - low > stop {
        let trial = 0.5 * (low + up);
        let certified = certify(trial)?;
        iterations += 1;
        low = low.max(certified);
        if trial > certified {
            up = trial;
        }
    }
    Ok(SearchOutcome {
        epsilon: 0.5 * (low + up),
        iterations,
        lower: low,
        upper: up,
    })
}

/// Search with envelope certificates (partial credit).
#[allow(clippy::too_many_arguments)]
pub fn search_optimal_eps(
    net: &NeuralNetwork,
    x: &[f64],
    label: usize,
    budget: &AdversarialBudget,
    lo: f64,
    hi: f64,
    tol: f64,
    propagator: Propagator,
) -> Result<SearchOutcome> {
    search_with(lo, hi, tol, |eps| {
        Ok(certify_point(net, x, label, &budget.with_epsilon(eps), propagator)?.radius)
    })
}

/// The same search driven by all-or-nothing certificates: plain bisection.
#[allow(clippy::too_many_arguments)]
pub fn search_bisection(
    net: &NeuralNetwork,
    x: &[f64],
    label: usize,
    budget: &AdversarialBudget,
    lo: f64,
    hi: f64,
    tol: f64,
    propagator: Propagator,
) -> Result<SearchOutcome> {
    search_with(lo, hi, tol, |eps| {
        Ok(certify_point(net, x, label, &budget.with_epsilon(eps), propagator)?.binary_radius())
    })
}
