use std::collections::BTreeMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Named parameter collection for a model or a single layer.
///
/// Ordered by name so iteration (and therefore serialization and optimizer
/// updates) is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<S>>,
}

pub type LayerParams<S = f32> = ParamStore<S>;

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    /// Registers a trainable tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, mut t: Tensor<S>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        t.requires_grad = true;
        self.tensors.insert(name, t);
        Ok(())
    }

    /// Inserts or overwrites.
    pub fn set(&mut self, name: impl Into<String>, mut t: Tensor<S>) {
        t.requires_grad = true;
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<S>> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Parameters whose names start with `prefix`, with the prefix stripped.
    pub fn subset(&self, prefix: &str) -> ParamStore<S> {
        let tensors = self
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        ParamStore { tensors }
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad = None;
        }
    }

    /// Adds gradients (keyed by parameter name) into each tensor's `grad`.
    pub fn accumulate(&mut self, grads: &BTreeMap<String, Vec<S>>) -> Result<()> {
        for (name, g) in grads {
            let t = self.get_mut(name)?;
            if g.len() != t.len() {
                return Err(Error::shape("accumulate", t.shape(), &[g.len()]));
            }
            match &mut t.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                None => t.grad = Some(g.clone()),
            }
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Same names, same shapes, bit-identical values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_f64().to_bits() == y.to_f64().to_bits())
            })
    }
}
