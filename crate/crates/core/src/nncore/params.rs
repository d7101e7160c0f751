use indexmap::IndexMap;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A trainable tensor and its gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S = f32> {
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet<S = f32> {
    entries: IndexMap<String, Param<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name:?}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name, Param { value, grad });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<S>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    fn entry(&self, name: &str) -> Result<&Param<S>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))
    }

    fn entry_mut(&mut self, name: &str) -> Result<&mut Param<S>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(&self.entry(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        Ok(&mut self.entry_mut(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(&self.entry(name)?.grad)
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        Ok(&mut self.entry_mut(name)?.grad)
    }

    pub fn accumulate(&mut self, name: &str, grad: &Tensor<S>) -> Result<()> {
        self.entry_mut(name)?.grad.add_assign(grad)
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(S::zero());
        }
    }

    pub fn scale_grads(&mut self, k: S) {
        for p in self.entries.values_mut() {
            p.grad.scale(k);
        }
    }

    /// Global L2 norm over every gradient slot.
    pub fn grad_norm(&self) -> S {
        self.entries
            .values()
            .flat_map(|p| p.grad.data().iter())
            .map(|&g| g * g)
            .sum::<S>()
            .sqrt()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Copy another set's values in (names and shapes must match).
    pub fn copy_values_from(&mut self, other: &ParamSet<S>) -> Result<()> {
        for (name, p) in self.entries.iter_mut() {
            let src = other.value(name)?;
            if src.shape() != p.value.shape() {
                return Err(Error::shape(format!("parameter {name:?} shape differs")));
            }
            p.value = src.clone();
        }
        Ok(())
    }

    /// Merge disjoint sets.
    pub fn extend(&mut self, other: ParamSet<S>) -> Result<()> {
        for (name, p) in other.entries {
            self.insert(name, p.value)?;
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), Param { value: p.value.cast(), grad: p.grad.cast() }))
                .collect(),
        }
    }

    /// Values with grads stripped; used for bit-exact comparisons.
    pub fn values_equal(&self, other: &ParamSet<S>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .all(|(k, p)| other.entries.get(k).is_some_and(|q| q.value == p.value))
    }
}
