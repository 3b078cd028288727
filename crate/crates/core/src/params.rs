use std::collections::HashMap;

use indexmap::IndexMap;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named, insertion-ordered collection of tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = (String, Tensor)>) -> Result<()> {
        items.into_iter().try_for_each(|(k, v)| self.insert(k, v))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Registers every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), requires_grad)))
            .collect();
        Bindings { vars }
    }
}

/// Tape handles for a bound [`ParamStore`], looked up by full name.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("parameter {name} is not bound")))
    }

    pub fn scope(&self, prefix: impl Into<String>) -> Scope<'_> {
        Scope { bindings: self, prefix: prefix.into() }
    }

    /// Gradients of every bound tensor, in the store's order.
    pub fn grads(&self, store: &ParamStore, tape: &Tape) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (name, value) in store.iter() {
            let g = tape
                .grad(self.get(name)?)
                .unwrap_or_else(|| Tensor::zeros(value.shape().to_vec()));
            out.insert(name, g)?;
        }
        Ok(out)
    }
}

/// View of [`Bindings`] under a dotted name prefix.
#[derive(Clone, Debug)]
pub struct Scope<'a> {
    bindings: &'a Bindings,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.bindings.get(&format!("{}.{name}", self.prefix))
    }

    pub fn scope(&self, name: &str) -> Scope<'a> {
        Scope { bindings: self.bindings, prefix: format!("{}.{name}", self.prefix) }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}
