use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use std::collections::HashMap;

/// Ordered, name-addressed parameter collection. Insertion order is the
/// canonical order used by the optimizer and the checkpoint container.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Two stores have the same manifest when names and shapes agree in order.
    pub fn same_manifest(&self, other: &ParamStore) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    /// Install every parameter as a tape leaf, returning name -> Var bindings.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut vars = Vec::with_capacity(self.entries.len());
        let mut by_name = HashMap::with_capacity(self.entries.len());
        for (name, tensor) in &self.entries {
            let v = tape.leaf(tensor.clone());
            by_name.insert(name.clone(), v);
            vars.push(v);
        }
        BoundParams { vars, by_name }
    }
}

/// Tape bindings for a [`ParamStore`], aligned with its insertion order.
pub struct BoundParams {
    vars: Vec<Var>,
    by_name: HashMap<String, Var>,
}

impl BoundParams {
    /// Assemble bindings from pre-existing tape vars (used when a caller
    /// owns leaf creation, e.g. gradient checking whole models).
    pub fn from_map(vars: Vec<Var>, by_name: HashMap<String, Var>) -> Self {
        BoundParams { vars, by_name }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients for every parameter, in store order. Call after backward.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars.iter().map(|&v| tape.grad(v)).collect()
    }
}
