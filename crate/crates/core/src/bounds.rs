//! Linear enclosures of pre-activations and output logits over an lp ball.
//!
//! Two propagators produce the same shapes:
//!
//! * [`Propagator::Backward`] back-substitutes every layer's bound through all
//!   earlier linearizations (Fast-Lin style, tighter, quadratic in depth).
//! * [`Propagator::Ibp`] pushes one affine enclosure forward layer by layer,
//!   like inference (cheaper, looser).
//!
//! Because every activation is relaxed with a single shared slope, the lower and
//! upper coefficient matrices always coincide; only the intercepts differ.
//! Intermediate intervals use the norm ball alone; any input box is left to the
//! distance computation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::linearize::{linearize_layer, LayerLinearization};
use crate::model::{AdversarialBudget, Network};
use crate::scalar::{dot_const, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagator {
    #[default]
    Backward,
    Ibp,
}

impl Propagator {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "backward" => Ok(Propagator::Backward),
            "ibp" => Ok(Propagator::Ibp),
            other => Err(Error::InvalidArgument(format!(
                "unknown propagator `{other}` (expected backward or ibp)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Propagator::Backward => "backward",
            Propagator::Ibp => "ibp",
        }
    }
}

/// `U·x′ + p ≤ value ≤ V·x′ + q` for every `x′` in the budget.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineBound<T> {
    pub lower_coef: Matrix<T>,
    pub lower_offset: Vec<T>,
    pub upper_coef: Matrix<T>,
    pub upper_offset: Vec<T>,
}

impl<T: Real> AffineBound<T> {
    pub fn exact(coef: Matrix<T>, offset: Vec<T>) -> Self {
        AffineBound {
            lower_coef: coef.clone(),
            lower_offset: offset.clone(),
            upper_coef: coef,
            upper_offset: offset,
        }
    }

    pub fn rows(&self) -> usize {
        self.lower_coef.rows()
    }

    pub fn lower_at(&self, x: &[f64]) -> Vec<T> {
        (0..self.rows())
            .map(|i| dot_const(self.lower_coef.row(i), x) + self.lower_offset[i])
            .collect()
    }

    pub fn upper_at(&self, x: &[f64]) -> Vec<T> {
        (0..self.rows())
            .map(|i| dot_const(self.upper_coef.row(i), x) + self.upper_offset[i])
            .collect()
    }

    fn all_finite(&self) -> bool {
        self.lower_coef.all_finite()
            && self.upper_coef.all_finite()
            && self.lower_offset.iter().all(|v| v.is_finite())
            && self.upper_offset.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalBound<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> IntervalBound<T> {
    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h.value() - l.value())
            .collect()
    }
}

/// Worst case of each row over the ball: `lo = U·x + p − ε‖U_i‖_q`,
/// `hi = V·x + q + ε‖V_i‖_q`.
pub fn concretize<T: Real>(bound: &AffineBound<T>, x: &[f64], budget: &AdversarialBudget) -> IntervalBound<T> {
    let eps = budget.epsilon;
    let norm = budget.norm;
    let lo_center = bound.lower_at(x);
    let hi_center = bound.upper_at(x);
    let lo = lo_center
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            if eps == 0.0 {
                c
            } else {
                c - norm.dual_of(bound.lower_coef.row(i)) * eps
            }
        })
        .collect();
    let hi = hi_center
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            if eps == 0.0 {
                c
            } else {
                c + norm.dual_of(bound.upper_coef.row(i)) * eps
            }
        })
        .collect();
    IntervalBound { lo, hi }
}

/// Everything a propagator learned about one input and budget.
#[derive(Clone, Debug)]
pub struct Propagation<T> {
    pub propagator: Propagator,
    /// Pre-activation intervals of the hidden layers, in order.
    pub intervals: Vec<IntervalBound<T>>,
    /// Activation linearizations matching `intervals`.
    pub linearizations: Vec<LayerLinearization<T>>,
    /// Enclosure of the last hidden post-activation (forward propagator only;
    /// the identity on the input for networks without hidden layers).
    pub last_hidden: Option<AffineBound<T>>,
    /// Enclosure of the output logits.
    pub output: AffineBound<T>,
}

pub fn propagate<T: Real>(
    net: &Network<T>,
    x: &[f64],
    budget: &AdversarialBudget,
    propagator: Propagator,
) -> Result<Propagation<T>> {
    match propagator {
        Propagator::Backward => propagate_backward(net, x, budget),
        Propagator::Ibp => propagate_forward_ibp(net, x, budget),
    }
}

/// Bound of `A·z_k + offset`, where `z_k` is the output of affine layer `k`
/// (1-based) and `A` already multiplies that layer's weight. Walks back to the
/// input, splitting each intercept range `m ∈ [l, u]` by the sign of the
/// accumulated coefficients.
fn back_substitute<T: Real>(
    net: &Network<T>,
    layer: usize,
    mut coef: Matrix<T>,
    offset: Vec<T>,
    lins: &[LayerLinearization<T>],
) -> AffineBound<T> {
    let layers = net.layers();
    let mut lower = offset.clone();
    let mut upper = offset;
    // `coef` acts on z_layer; fold in layer `layer`'s affine map first.
    let mut k = layer;
    loop {
        let dense = &layers[k - 1];
        let shift = coef.matvec(&dense.bias);
        for (i, s) in shift.into_iter().enumerate() {
            lower[i] += s;
            upper[i] += s;
        }
        coef = coef.matmul(&dense.weight);
        if k == 1 {
            break;
        }
        // coef now acts on h_{k-1} = σ(z_{k-1}) = D z_{k-1} + m.
        let lin = &lins[k - 2];
        for (i, v) in coef.split_lower(&lin.lower, &lin.upper).into_iter().enumerate() {
            lower[i] += v;
        }
        for (i, v) in coef.split_upper(&lin.lower, &lin.upper).into_iter().enumerate() {
            upper[i] += v;
        }
        coef = coef.scale_columns(&lin.slope);
        k -= 1;
    }
    AffineBound {
        lower_coef: coef.clone(),
        lower_offset: lower,
        upper_coef: coef,
        upper_offset: upper,
    }
}

/// Bound of `A·σ(z_k) + offset` for `k ≥ 1`: the activation step followed by
/// back-substitution.
fn back_substitute_post<T: Real>(
    net: &Network<T>,
    hidden: usize,
    coef: Matrix<T>,
    offset: Vec<T>,
    lins: &[LayerLinearization<T>],
) -> AffineBound<T> {
    if hidden == 0 {
        // Directly on the input.
        return AffineBound::exact(coef, offset);
    }
    let lin = &lins[hidden - 1];
    let mut lower = offset.clone();
    let mut upper = offset;
    for (i, v) in coef.split_lower(&lin.lower, &lin.upper).into_iter().enumerate() {
        lower[i] += v;
    }
    for (i, v) in coef.split_upper(&lin.lower, &lin.upper).into_iter().enumerate() {
        upper[i] += v;
    }
    let coef = coef.scale_columns(&lin.slope);
    let inner = back_substitute(net, hidden, coef, vec![T::zero(); lower.len()], lins);
    AffineBound {
        lower_offset: inner.lower_offset.iter().zip(&lower).map(|(&a, &b)| a + b).collect(),
        upper_offset: inner.upper_offset.iter().zip(&upper).map(|(&a, &b)| a + b).collect(),
        lower_coef: inner.lower_coef,
        upper_coef: inner.upper_coef,
    }
}

fn check_finite<T: Real>(interval: &IntervalBound<T>, layer: usize) -> Result<()> {
    if interval.lo.iter().chain(&interval.hi).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer })
    }
}

fn check_input<T: Real>(net: &Network<T>, x: &[f64]) -> Result<()> {
    net.check_input(x)?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { layer: 0 });
    }
    Ok(())
}

pub fn propagate_backward<T: Real>(
    net: &Network<T>,
    x: &[f64],
    budget: &AdversarialBudget,
) -> Result<Propagation<T>> {
    check_input(net, x)?;
    let layers = net.layers();
    let n_affine = layers.len();
    let mut intervals = Vec::with_capacity(n_affine - 1);
    let mut lins: Vec<LayerLinearization<T>> = Vec::with_capacity(n_affine - 1);
    for k in 1..n_affine {
        let bound = back_substitute_post(
            net,
            k - 1,
            layers[k - 1].weight.clone(),
            layers[k - 1].bias.clone(),
            &lins,
        );
        let interval = concretize(&bound, x, budget);
        check_finite(&interval, k)?;
        lins.push(linearize_layer(net.activation(), &interval.lo, &interval.hi)?);
        intervals.push(interval);
    }
    let last = &layers[n_affine - 1];
    let output = back_substitute_post(net, n_affine - 1, last.weight.clone(), last.bias.clone(), &lins);
    if !output.all_finite() {
        return Err(Error::NonFinite { layer: n_affine });
    }
    Ok(Propagation {
        propagator: Propagator::Backward,
        intervals,
        linearizations: lins,
        last_hidden: None,
        output,
    })
}

/// `W·(enclosure) + b` with the intercepts split by the sign of `W`.
fn affine_step<T: Real>(weight: &Matrix<T>, bias: &[T], post: &AffineBound<T>) -> AffineBound<T> {
    let (lower_coef, upper_coef) = if post.lower_coef.same_values(&post.upper_coef) {
        let c = weight.matmul(&post.lower_coef);
        (c.clone(), c)
    } else {
        let pos = weight.positive_part();
        let neg = weight.negative_part();
        (
            pos.matmul(&post.lower_coef).add(&neg.matmul(&post.upper_coef)),
            pos.matmul(&post.upper_coef).add(&neg.matmul(&post.lower_coef)),
        )
    };
    let lower_offset = weight
        .split_lower(&post.lower_offset, &post.upper_offset)
        .into_iter()
        .zip(bias)
        .map(|(a, &b)| a + b)
        .collect();
    let upper_offset = weight
        .split_upper(&post.lower_offset, &post.upper_offset)
        .into_iter()
        .zip(bias)
        .map(|(a, &b)| a + b)
        .collect();
    AffineBound {
        lower_coef,
        lower_offset,
        upper_coef,
        upper_offset,
    }
}

pub fn propagate_forward_ibp<T: Real>(
    net: &Network<T>,
    x: &[f64],
    budget: &AdversarialBudget,
) -> Result<Propagation<T>> {
    check_input(net, x)?;
    let layers = net.layers();
    let n_affine = layers.len();
    let n0 = net.input_dim();
    let mut post = AffineBound::exact(Matrix::identity(n0), vec![T::zero(); n0]);
    let mut intervals = Vec::with_capacity(n_affine - 1);
    let mut lins = Vec::with_capacity(n_affine - 1);
    for (k, dense) in layers.iter().enumerate().take(n_affine - 1) {
        let pre = affine_step(&dense.weight, &dense.bias, &post);
        let interval = concretize(&pre, x, budget);
        check_finite(&interval, k + 1)?;
        let lin = linearize_layer(net.activation(), &interval.lo, &interval.hi)?;
        let coef = pre.lower_coef.scale_rows(&lin.slope);
        let lower_offset = (0..lin.len())
            .map(|i| lin.slope[i] * pre.lower_offset[i] + lin.lower[i])
            .collect();
        let upper_offset = (0..lin.len())
            .map(|i| lin.slope[i] * pre.upper_offset[i] + lin.upper[i])
            .collect();
        post = AffineBound {
            lower_coef: coef.clone(),
            lower_offset,
            upper_coef: coef,
            upper_offset,
        };
        intervals.push(interval);
        lins.push(lin);
    }
    let last = &layers[n_affine - 1];
    let output = affine_step(&last.weight, &last.bias, &post);
    if !output.all_finite() {
        return Err(Error::NonFinite { layer: n_affine });
    }
    Ok(Propagation {
        propagator: Propagator::Ibp,
        intervals,
        linearizations: lins,
        last_hidden: Some(post),
        output,
    })
}

/// Lower bounds of the margins `z_c − z_i` for every class `i`: the last layer
/// is replaced by rows `W_c − W_i` and bias `b_c − b_i` before its propagation
/// step. Row `c` is identically zero.
pub fn elide_margins<T: Real>(net: &Network<T>, prop: &Propagation<T>, label: usize) -> Result<AffineBound<T>> {
    let k = net.num_classes();
    if label >= k {
        return Err(Error::InvalidLabel {
            label,
            classes: k,
        });
    }
    let last = net.layers().last().expect("validated network has layers");
    let w = &last.weight;
    let diff = Matrix::from_fn(k, w.cols(), |i, j| {
        if i == label {
            T::zero()
        } else {
            w.get(label, j) - w.get(i, j)
        }
    });
    let bias: Vec<T> = (0..k)
        .map(|i| {
            if i == label {
                T::zero()
            } else {
                last.bias[label] - last.bias[i]
            }
        })
        .collect();
    let hidden = net.layers().len() - 1;
    let bound = match prop.propagator {
        Propagator::Backward => back_substitute_post(net, hidden, diff, bias, &prop.linearizations),
        Propagator::Ibp => {
            let post = prop
                .last_hidden
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("forward propagation context missing".into()))?;
            affine_step(&diff, &bias, post)
        }
    };
    if !bound.all_finite() {
        return Err(Error::NonFinite {
            layer: net.layers().len(),
        });
    }
    Ok(bound)
}

/// Margin lower bounds `(U_i, p_i)` for every class under the budget around `x`.
pub fn margin_bounds<T: Real>(
    net: &Network<T>,
    x: &[f64],
    label: usize,
    budget: &AdversarialBudget,
    propagator: Propagator,
) -> Result<AffineBound<T>> {
    let prop = propagate(net, x, budget, propagator)?;
    elide_margins(net, &prop, label)
}
