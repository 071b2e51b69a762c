//! Tape-based reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]. Because nodes
//! are only ever appended, a node's parents always sit at smaller indices and
//! the tape order is a topological order of the graph.
//!
//! [`Tape::grad`] walks the tape backwards. Vector-Jacobian products are
//! themselves written with `Var` operations, so when `create_graph` is set the
//! returned gradients are ordinary differentiable nodes and a second call to
//! `grad` yields exact second derivatives. With `create_graph` off the same
//! arithmetic runs with recording paused, and the results come back as
//! constants.

mod ops;
mod vjp;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use ops::conv_output_size;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Permute(usize, Rc<[usize]>),
    Reshape(usize),
    Expand(usize),
    SumTo(usize),
    Relu(usize),
    Sigmoid(usize),
    Powf(usize, f64),
    SoftmaxRows(usize),
    LogSumExpRows(usize),
    Gather(usize, Rc<[usize]>),
    Scatter(usize, Rc<[usize]>),
}

/// Primitive kind of a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    Permute,
    Reshape,
    Expand,
    SumTo,
    Relu,
    Sigmoid,
    Powf,
    SoftmaxRows,
    LogSumExpRows,
    Gather,
    Scatter,
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Permute(..) => OpKind::Permute,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Expand(..) => OpKind::Expand,
            Op::SumTo(..) => OpKind::SumTo,
            Op::Relu(..) => OpKind::Relu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Powf(..) => OpKind::Powf,
            Op::SoftmaxRows(..) => OpKind::SoftmaxRows,
            Op::LogSumExpRows(..) => OpKind::LogSumExpRows,
            Op::Gather(..) => OpKind::Gather,
            Op::Scatter(..) => OpKind::Scatter,
        }
    }

    fn parents(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Permute(a, _)
            | Op::Reshape(a)
            | Op::Expand(a)
            | Op::SumTo(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Powf(a, _)
            | Op::SoftmaxRows(a)
            | Op::LogSumExpRows(a)
            | Op::Gather(a, _)
            | Op::Scatter(a, _) => vec![a],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("len", &self.len())
            .field("recording", &self.recording.get())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    /// A leaf that gradients are taken with respect to.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_recording(&self) -> bool {
        self.recording.get()
    }

    /// Runs `f` with recording paused: every node it creates is a constant.
    pub fn without_recording<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.recording.replace(false);
        let out = f();
        self.recording.set(prev);
        out
    }

    fn push_node(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        self.push_shared(Rc::new(value), op, requires_grad)
    }

    fn push_shared(&self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records `op` when recording is on and some parent needs a gradient;
    /// otherwise the result is a constant leaf.
    pub(crate) fn push_op(&self, value: Tensor, op: Op) -> Var<'_> {
        let track = self.recording.get() && {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|&p| nodes[p].requires_grad)
        };
        if track {
            self.push_node(value, op, true)
        } else {
            self.push_node(value, Op::Leaf, false)
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub(crate) fn handle(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Reverse-mode gradients of the scalar `output` with respect to `wrt`.
    ///
    /// A `wrt` node that `output` does not depend on gets a zero tensor of its
    /// shape. With `create_graph` the results are recorded nodes that can be
    /// differentiated again.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Result<Vec<Var<'t>>> {
        let out_value = output.value();
        if out_value.numel() != 1 {
            return Err(Error::shape(
                "grad",
                format!("output must be scalar, got shape {:?}", out_value.shape()),
            ));
        }
        for w in wrt {
            if !std::ptr::eq(w.tape, self) {
                return Err(Error::invalid("grad: wrt node belongs to a different tape"));
            }
        }

        let end = output.id + 1;
        let mut grads: Vec<Option<Var<'t>>> = vec![None; end];
        let prev = self.recording.replace(create_graph);
        let result: Result<()> = (|| {
            if self.requires_grad(output.id) {
                grads[output.id] =
                    Some(self.constant(Tensor::ones(out_value.shape(), out_value.precision())));
            }
            for id in (0..end).rev() {
                let Some(g) = grads[id] else { continue };
                let op = {
                    let nodes = self.nodes.borrow();
                    if !nodes[id].requires_grad {
                        continue;
                    }
                    nodes[id].op.clone()
                };
                if matches!(op, Op::Leaf) {
                    continue;
                }
                let needs = |p: usize| self.requires_grad(p);
                for (parent, contrib) in vjp::vjp(self, id, &op, g, &needs)? {
                    grads[parent] = Some(match grads[parent] {
                        Some(acc) => acc.add(&contrib)?,
                        None => contrib,
                    });
                }
            }
            Ok(())
        })();
        self.recording.set(prev);
        result?;

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) if create_graph => g,
                Some(g) if g.requires_grad() => g.detach(),
                Some(g) => g,
                None => {
                    let v = w.value();
                    self.constant(Tensor::zeros(v.shape(), v.precision()))
                }
            })
            .collect())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("op", &self.op_kind())
            .field("shape", &self.value().shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn op_kind(&self) -> OpKind {
        self.tape.nodes.borrow()[self.id].op.kind()
    }

    /// Tape indices of the recorded parents (empty for leaves).
    pub fn parents(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].op.parents()
    }

    /// A constant leaf holding the same value.
    pub fn detach(&self) -> Var<'t> {
        self.tape.push_shared(self.value(), Op::Leaf, false)
    }
}

/// Free-function form of [`Tape::grad`].
pub fn grad<'t>(output: Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Result<Vec<Var<'t>>> {
    output.tape.grad(output, wrt, create_graph)
}
