//! Trainable layers and the parameter store they register into.
//!
//! Layers hold [`ParamId`] handles rather than tensors. A forward pass first
//! binds the whole [`ParameterStore`] onto a tape, then each layer looks up its
//! leaves in the resulting [`Bound`] set. After the reverse sweep the store
//! collects one gradient per parameter, in registration order.

mod attention;
mod gru;
mod linear;
mod lstm;

pub use attention::{KvCache, SelfAttention};
pub use gru::GruCell;
pub use linear::{Linear, Mlp};
pub use lstm::{LstmCell, LstmEncoder, LstmState};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, name_index, rng_from, Stream};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors with one gradient slot each.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<T: Scalar = f64> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
    seed: u64,
}

impl<T: Scalar> ParameterStore<T> {
    /// An empty store whose initializers draw from streams keyed by `seed`.
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.grads.push(Tensor::zeros(value.shape().to_vec()));
        self.values.push(value);
        self.names.push(name);
        Ok(ParamId(id))
    }

    /// Registers a tensor drawn from `uniform(-bound, bound)` with a stream
    /// keyed by the parameter name.
    pub fn register_uniform(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Vec<usize>>,
        bound: f64,
    ) -> Result<ParamId> {
        let name = name.into();
        let mut rng = rng_from(derive_seed(self.seed, Stream::Init, name_index(&name)));
        let value = Tensor::uniform(shape, bound, &mut rng);
        self.register(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn grads(&self) -> &[Tensor<T>] {
        &self.grads
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    /// Replaces a parameter by name, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::ShapeMismatch {
                op: "set parameter",
                left: self.values[id.0].shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, v) in self.names.iter().zip(self.values.iter_mut()) {
            if name.starts_with(prefix) {
                v.data_mut().iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect(),
        }
    }

    /// Copies gradients for the bound leaves into the gradient slots.
    pub fn collect_grads(&mut self, bound: &Bound<'_, T>, grads: &mut Gradients<T>) {
        for (slot, var) in self.grads.iter_mut().zip(&bound.vars) {
            *slot = grads.take(var.id());
        }
    }
}

/// Parameters of a [`ParameterStore`] recorded on one tape.
#[derive(Debug, Clone)]
pub struct Bound<'t, T: Scalar = f64> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

pub(crate) fn check_width(op: &'static str, shape: &[usize], expected: usize) -> Result<()> {
    match shape.last() {
        Some(&w) if w == expected => Ok(()),
        _ => Err(Error::ShapeMismatch {
            op,
            left: vec![expected],
            right: shape.to_vec(),
        }),
    }
}
