use std::collections::BTreeMap;

use super::io::NamedTensors;
use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self { tensors: BTreeMap::new() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn extend(&mut self, other: ParamStore<T>) {
        self.tensors.extend(other.tensors);
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Records every tensor on the tape, as trainable parameters or as constants.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable { tape.param(name.clone(), t.clone()) } else { tape.constant(t.clone()) };
                (name.clone(), v)
            })
            .collect();
        ParamVars { vars }
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn from_named(named: &NamedTensors, prefix: &str) -> Self
    where
        T: Real,
    {
        let tensors = named
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|rest| (rest.to_owned(), v.cast())))
            .collect();
        Self { tensors }
    }

    pub fn write_named(&self, named: &mut NamedTensors, prefix: &str) {
        for (k, v) in &self.tensors {
            named.insert(format!("{prefix}{k}"), v.cast());
        }
    }
}

/// Tape handles for a registered [`ParamStore`].
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }
}
