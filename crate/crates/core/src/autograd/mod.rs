//! Reverse-mode differentiation over a Wengert tape.
//!
//! A [`Tape`] records every operation of one forward pass. [`Var`] is a cheap
//! copyable handle to a recorded value. [`Tape::backward`] replays the tape in
//! reverse and returns a [`Gradients`] table indexed by the same handles.

mod kernels;
mod ops;

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;

pub use ops::Activation;

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub(crate) enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    MatMul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    MaskedFill {
        x: usize,
        keep: Vec<bool>,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        stats: Vec<(S, S)>,
    },
    Dropout {
        x: usize,
        multipliers: Vec<S>,
    },
    Activation(usize, Activation),
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<S>,
        smoothing: S,
        count: usize,
    },
    Rotary {
        x: usize,
        cos: Vec<S>,
        sin: Vec<S>,
        per_batch: bool,
    },
    SumAll(usize),
    Mean(usize),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Records one forward pass.
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    bound: RefCell<HashMap<ParamId, usize>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a stored parameter to this tape. Binding the same parameter twice
    /// returns the same handle so gradients accumulate in one place.
    pub fn param(&self, store: &ParamStore<S>, id: ParamId) -> Var<'_, S> {
        if let Some(&node) = self.bound.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let var = self.leaf(store.value(id).clone());
        self.bound.borrow_mut().insert(id, var.id);
        var
    }

    pub(crate) fn push(&self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn needs_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    pub(crate) fn value_ref(&self, id: usize) -> Ref<'_, Tensor<S>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    pub(crate) fn bound_params(&self) -> Vec<(ParamId, usize)> {
        let mut v: Vec<_> = self.bound.borrow().iter().map(|(&p, &n)| (p, n)).collect();
        v.sort_by_key(|&(p, _)| p);
        v
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        let numel = loss.value().numel();
        if numel != 1 {
            return Err(Error::InvalidShape {
                shape: loss.shape(),
                reason: "backward needs a single-element loss".into(),
            });
        }
        self.backward_with(loss, Tensor::full(&loss.shape(), S::one()))
    }

    /// Reverse pass seeded with an explicit upstream gradient for `output`.
    pub fn backward_with(&self, output: Var<'_, S>, seed: Tensor<S>) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        if seed.shape() != nodes[output.id].value.shape() {
            return Err(Error::shape("backward", seed.shape(), nodes[output.id].value.shape()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(seed.into_data());
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if nodes[id].needs_grad {
                ops::backward(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| {
                g.filter(|_| n.needs_grad)
                    .map(|g| Tensor::new(n.value.shape(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// `None` when the node is not on a differentiable path from the loss.
    pub fn get(&self, var: Var<'_, S>) -> Option<&Tensor<S>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub(crate) fn by_id(&self, id: usize) -> Option<&Tensor<S>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S: Scalar> Clone for Var<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S: Scalar> Copy for Var<'_, S> {}

impl<S: Scalar> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor<S>> {
        self.tape.value_ref(self.id)
    }

    pub fn to_tensor(&self) -> Tensor<S> {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs_grad(self.id)
    }
}
