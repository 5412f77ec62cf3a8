//! Tape-based reverse-mode differentiation over scalars.
//!
//! A [`Tape`] records every operation on its [`Var`]s. Constants (created with
//! [`Real::constant`]) are not attached to any tape and cost nothing to combine.
//! After building an output, [`Tape::gradient`] sweeps the tape backwards once.

use std::cell::RefCell;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::scalar::{sigmoid_f64, Real};

const NO_PARENT: usize = usize::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [(usize, f64); 2],
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable input.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push([(NO_PARENT, 0.0), (NO_PARENT, 0.0)]);
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, parents: [(usize, f64); 2]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents });
        nodes.len() - 1
    }

    /// d(output)/d(every node). Constant outputs give an all-zero gradient.
    pub fn gradient(&self, output: Var<'_>) -> Gradient {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        if output.index == NO_PARENT {
            return Gradient { adjoint };
        }
        adjoint[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let g = adjoint[i];
            if g == 0.0 {
                continue;
            }
            for &(p, w) in &nodes[i].parents {
                if p != NO_PARENT {
                    adjoint[p] += g * w;
                }
            }
        }
        Gradient { adjoint }
    }
}

pub struct Gradient {
    adjoint: Vec<f64>,
}

impl Gradient {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.index == NO_PARENT {
            0.0
        } else {
            self.adjoint[v.index]
        }
    }
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: usize,
    value: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.value)
    }
}

impl<'t> Var<'t> {
    pub fn is_constant(&self) -> bool {
        self.index == NO_PARENT
    }

    fn unary(self, value: f64, d: f64) -> Self {
        match self.tape {
            Some(tape) if self.index != NO_PARENT => Var {
                tape: Some(tape),
                index: tape.push([(self.index, d), (NO_PARENT, 0.0)]),
                value,
            },
            _ => Var::constant(value),
        }
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        let tape = match (self.tape, other.tape) {
            (Some(t), _) if self.index != NO_PARENT => t,
            (_, Some(t)) if other.index != NO_PARENT => t,
            _ => return Var::constant(value),
        };
        let a = if self.index == NO_PARENT { (NO_PARENT, 0.0) } else { (self.index, da) };
        let b = if other.index == NO_PARENT { (NO_PARENT, 0.0) } else { (other.index, db) };
        Var {
            tape: Some(tape),
            index: tape.push([a, b]),
            value,
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let v = self.value / rhs.value;
        self.binary(rhs, v, 1.0 / rhs.value, -v / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> AddAssign for Var<'t> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<'t> Real for Var<'t> {
    fn constant(v: f64) -> Self {
        Var {
            tape: None,
            index: NO_PARENT,
            value: v,
        }
    }

    fn value(self) -> f64 {
        self.value
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }

    fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }

    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.unary(s, 0.5 / s)
    }

    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t)
    }

    fn atan(self) -> Self {
        self.unary(self.value.atan(), 1.0 / (1.0 + self.value * self.value))
    }

    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.value);
        self.unary(s, s * (1.0 - s))
    }

    fn abs(self) -> Self {
        let d = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.value.abs(), d)
    }

    fn powf(self, exponent: f64) -> Self {
        let v = self.value.powf(exponent);
        let d = if exponent == 0.0 {
            0.0
        } else {
            exponent * self.value.powf(exponent - 1.0)
        };
        self.unary(v, d)
    }
}
