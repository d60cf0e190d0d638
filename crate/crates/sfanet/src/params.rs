//! Named parameter registry: the single owner of every trainable tensor.
//!
//! Modules hold [`ParamId`] handles; the registry provides name-addressed
//! access for checkpoints, reports and test surgery (e.g. zeroing selected
//! projections).

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// One trainable tensor with a path-like unique name.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Ordered collection of parameters with unique names.
#[derive(Default, Debug, Clone)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Register a tensor under a unique path-like name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::config(format!("duplicate parameter name: {name}")));
        }
        self.params.push(Parameter { name, value });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Fan-in scaled uniform init, the default for conv / linear weights:
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn add_fan_in(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::rand_uniform(rng, shape, -bound, bound))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.params[id.0].value.shape() {
            return Err(Error::shape(format!(
                "parameter {} has shape {:?}, refusing {:?}",
                self.params[id.0].name,
                self.params[id.0].value.shape(),
                value.shape()
            )));
        }
        self.params[id.0].value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn by_name(&self, name: &str) -> Option<(ParamId, &Parameter)> {
        self.params
            .iter()
            .enumerate()
            .find(|(_, p)| p.name == name)
            .map(|(i, p)| (ParamId(i), p))
    }

    /// Total scalar count.
    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Zero every parameter whose name contains `needle`. Returns how many
    /// tensors were touched (0 means the pattern matched nothing).
    pub fn zero_matching(&mut self, needle: &str) -> usize {
        let mut touched = 0;
        for p in self.params.iter_mut() {
            if p.name.contains(needle) {
                p.value = Tensor::zeros(p.value.shape());
                touched += 1;
            }
        }
        touched
    }

    /// Bind every parameter as a differentiable graph input, in order.
    /// `vars[id.0]` is the Var for `ParamId(id.0)`.
    pub fn bind(&self, g: &Graph) -> BoundParams {
        BoundParams {
            vars: self.params.iter().map(|p| g.input(p.value.clone())).collect(),
        }
    }
}

/// Per-forward-pass binding of every parameter to a graph Var.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Bind from an explicit Var list (ordered like the ParamSet). Used by
    /// gradient-check harnesses that route parameters through test inputs.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
