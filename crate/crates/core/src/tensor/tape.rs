use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Recorded operation kinds. Operand values are read back from the input
/// nodes during the reverse sweep, so only non-tensor parameters live here.
#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(T),
    Offset,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Relu,
    Square,
    /// x · Wᵀ (+ b) over the trailing dimension.
    Affine,
    /// Batched matrix product; `b_shared` when the right operand is a single matrix.
    Matmul {
        b_shared: bool,
    },
    Transpose,
    Permute(Vec<usize>),
    Reshape,
    Sum,
    Mean,
    SumAxis(usize),
    MeanAxis(usize),
    Softmax(usize),
    CausalSoftmax,
    LogSoftmax,
    Concat(usize),
    IndexSelect {
        axis: usize,
        indices: Vec<usize>,
    },
    /// Rows along axis 0 that were replaced by zeros.
    GuardRows(Vec<bool>),
    /// One query row attending over cached key/value rows; inputs are
    /// `[q, k_0.., v_0..]` and `weights` is `[B, heads, S]`.
    CachedAttention {
        heads: usize,
        scale: T,
        weights: Vec<T>,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) inputs: Vec<usize>,
}

/// Append-only record of a differentiable computation.
///
/// A tape is a single-threaded unit of work: nodes are stored in creation
/// order, so every node's inputs precede it. A strict tape rejects any
/// operation whose output is not finite; strictness defaults to on in debug
/// builds.
pub struct Tape<T: Scalar = f64> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
    strict: bool,
    pub(crate) consumed: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::with_strict(cfg!(debug_assertions))
    }

    /// A tape that records non-finite values instead of failing; the caller is
    /// responsible for detecting divergence.
    pub fn lenient() -> Self {
        Self::with_strict(false)
    }

    pub fn with_strict(strict: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            strict,
            consumed: Cell::new(false),
        }
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.consumed.set(false);
    }

    /// Records an input tensor. Gradients are available for every leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value,
                op: Op::Leaf,
                inputs: Vec::new(),
            });
            nodes.len() - 1
        };
        Var { tape: self, id }
    }

    /// Alias of [`Tape::leaf`] for tensors that are not trained.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value)
    }

    pub(crate) fn push(
        &self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: Vec<usize>,
    ) -> Result<Var<'_, T>> {
        if self.strict && !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, inputs });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar = f64> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub(crate) fn node(&self) -> Ref<'t, Node<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node().value.shape().to_vec()
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor<T> {
        self.node().value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.node().value)
    }

    pub(crate) fn same_tape(&self, other: &Var<'t, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables recorded on different tapes"
        );
    }
}
