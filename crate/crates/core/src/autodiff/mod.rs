//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! return [`Var`] handles into the tape; [`Tape::backward`] walks the
//! recorded operations in reverse and accumulates gradients into every
//! node that requires them.
//!
//! ```
//! use kfbf_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

mod bspline;
mod ops;
mod tensor;

pub use bspline::{bspline_basis, KnotGrid};
pub use ops::LAYERNORM_EPS;
pub use tensor::{Shape, Tensor};

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left} and {right}")]
    Shape {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalar(Shape),
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("tensor data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("{op}: range {start}..{end} out of bounds for extent {extent}")]
    Range {
        op: &'static str,
        start: usize,
        end: usize,
        extent: usize,
    },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulScalar(Var, Var),
    Square(Var),
    Sqrt(Var),
    Ln(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Silu(Var),
    ClampMin(Var, f64),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Diag(Var),
    Transpose(Var),
    Reshape(Var),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RepeatRows { x: Var, times: usize },
    BSpline { x: Var, derivative: Vec<f64> },
    KanSpline { x: Var, coef: Var, gamma: Var, basis: Vec<f64>, derivative: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Records a computation so it can be differentiated.
///
/// Nodes are appended in evaluation order, so the tape is always
/// topologically sorted.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant (no gradient is tracked).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, requires_grad, op)
    }

    /// Computes d(loss)/d(node) for every node that requires a gradient.
    ///
    /// Gradients accumulate: calling this twice on the same tape adds the
    /// second pass on top of the first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.len() != 1 {
            return Err(AutodiffError::NonScalar(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        accumulate(&mut self.nodes[loss.0], &[1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad || matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &grad);
            self.nodes[idx].grad = Some(grad);
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, g: &[f64]) {
        let node = &mut self.nodes[v.0];
        if node.requires_grad {
            accumulate(node, g);
        }
    }

    fn grad_slot(&mut self, v: Var) -> Option<&mut [f64]> {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(node.grad.get_or_insert_with(|| vec![0.0; len]))
    }
}

fn accumulate(node: &mut Node, g: &[f64]) {
    match &mut node.grad {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => node.grad = Some(g.to_vec()),
    }
}

/// Shared immutable storage for tensor data.
pub(crate) type Storage = Arc<Vec<f64>>;
