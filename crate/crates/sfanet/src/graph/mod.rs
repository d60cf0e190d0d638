//! Reverse-mode automatic differentiation on a flat operation tape.
//!
//! Ops record their output value plus a backward closure onto a [`Graph`].
//! Execution order doubles as a topological order, so the reverse sweep is
//! a single pass from the loss node down to node zero, accumulating
//! gradient contributions additively.

pub mod check;
pub mod conv;
pub mod norm;
pub mod ops;
pub mod pool;
pub mod spectral;

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Copyable; only meaningful for the
/// graph that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// A complex value on the tape: two real nodes of identical shape.
#[derive(Clone, Copy, Debug)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

/// Per-node backward pass: maps the incoming output gradient to one
/// `(parent, contribution)` pair per differentiable parent.
type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<(Var, Tensor)>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Operation tape.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Register a differentiable leaf (parameter or input under test).
    pub fn input(&self, value: Tensor) -> Var {
        self.push(Node { value, requires_grad: true, backward: None })
    }

    /// Register a non-differentiable leaf (data, masks, constants).
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Node { value, requires_grad: false, backward: None })
    }

    /// Current value of a node (cheap: shares the buffer).
    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// Record an op node. `parents` drives gradient bookkeeping: the node
    /// requires a gradient iff any parent does, and the backward closure is
    /// dropped entirely otherwise.
    pub(crate) fn op(&self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        let backward = if requires_grad { Some(backward) } else { None };
        self.push(Node { value, requires_grad, backward })
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every node
    /// that participated; leaves created after `loss` are ignored.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(loss_node.value.shape()));

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].clone() else { continue };
            let Some(backward) = nodes[id].backward.as_ref() else { continue };
            for (parent, contribution) in backward(&grad) {
                if !nodes[parent.0].requires_grad {
                    continue;
                }
                if contribution.shape() != nodes[parent.0].value.shape() {
                    return Err(Error::shape(format!(
                        "backward of node {id} sent gradient {:?} to parent {} of shape {:?}",
                        contribution.shape(),
                        parent.0,
                        nodes[parent.0].value.shape()
                    )));
                }
                match &mut grads[parent.0] {
                    slot @ None => *slot = Some(contribution),
                    Some(acc) => {
                        let summed = acc.zip_map(&contribution, |a, b| a + b)?;
                        *acc = summed;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of a reverse sweep: per-node gradients, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the given shape when no path reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }

    /// Add another sweep's gradients into this one (repeated backward
    /// accumulates rather than overwrites).
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (slot, incoming) in self.grads.iter_mut().zip(other.grads.iter()) {
            match (slot.as_mut(), incoming) {
                (Some(acc), Some(inc)) => *acc = acc.zip_map(inc, |a, b| a + b)?,
                (None, Some(inc)) => *slot = Some(inc.clone()),
                _ => {}
            }
        }
        Ok(())
    }
}
