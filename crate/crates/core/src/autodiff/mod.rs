//! Define-by-run reverse-mode automatic differentiation over [`DenseMatrix`].
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a scalar walks the records in reverse and returns the
//! adjoint of every node that depends on a leaf created with [`Tape::leaf`].
//! Tapes are cheap and meant to be rebuilt for every evaluation.

mod check;
mod nodes;
mod ops;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub use check::{grad_check, GradCheckReport};
pub use nodes::{geodesic_node, solve_node, GeodesicNodeOutput};

/// Backward rule of a node whose forward value was computed outside the tape.
pub trait CustomOp {
    fn name(&self) -> &str;

    /// Adjoints of the inputs given the adjoint of the output. `None` means the
    /// input does not influence the output.
    fn backward(&self, inputs: &[&DenseMatrix], output: &DenseMatrix, grad: &DenseMatrix)
        -> Result<Vec<Option<DenseMatrix>>>;
}

pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { src: usize, start: usize },
    SliceRows { src: usize, start: usize },
    Reshape(usize),
    RowMax { src: usize, argmax: Vec<usize> },
    GroupMax { src: usize, argmax: Vec<usize> },
    Elu(usize),
    Tanh(usize),
    Exp(usize),
    Square(usize),
    Sqrt(usize),
    Sum(usize),
    Mean(usize),
    MaskedSelect { src: usize, index: Vec<usize> },
    PairwiseDist(usize),
    SelectRows { src: usize, rows: Vec<usize> },
    Custom { parents: Vec<usize>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Rc<DenseMatrix>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{} {r}x{c}", self.id)
    }
}

/// Adjoints indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&DenseMatrix> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> DenseMatrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.id];
                DenseMatrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, value: DenseMatrix) -> Var<'_> {
        self.push(value, true, Op::Leaf)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: DenseMatrix) -> Var<'_> {
        self.push(value, false, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(DenseMatrix::scalar(value))
    }

    /// Records a node whose value was computed by the caller.
    pub fn custom<'t>(&'t self, inputs: &[Var<'t>], value: DenseMatrix, op: Box<dyn CustomOp>) -> Var<'t> {
        let parents: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let rg = self.any_requires_grad(&parents);
        self.push(value, rg, Op::Custom { parents, op })
    }

    fn push(&self, value: DenseMatrix, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), requires_grad, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Rc<DenseMatrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn any_requires_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse pass from a 1x1 `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::InvalidArgument("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        let shapes: Vec<_> = nodes.iter().map(|n| n.value.shape()).collect();
        if shapes[loss.id] != (1, 1) {
            let (r, c) = shapes[loss.id];
            return Err(Error::Shape(format!("backward needs a scalar loss, got {r}x{c}")));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(DenseMatrix::scalar(1.0));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !matches!(node.op, Op::Leaf) {
                for (parent, pg) in ops::vjp(&nodes, node, &g)? {
                    if !nodes[parent].requires_grad {
                        continue;
                    }
                    match &mut grads[parent] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<DenseMatrix> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Value of a 1x1 variable.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("operands live on different tapes".into()))
        }
    }

    fn unary(&self, value: DenseMatrix, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, rg, op)
    }

    fn binary(&self, other: &Var<'t>, value: DenseMatrix, op: Op) -> Var<'t> {
        let rg = self.tape.any_requires_grad(&[self.id, other.id]);
        self.tape.push(value, rg, op)
    }
}

pub(crate) fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

#[cfg(test)]
mod tests;
