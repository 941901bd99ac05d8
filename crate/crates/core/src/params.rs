//! Flat named parameter sets. Networks expose their weights this way, the
//! optimizers mirror them slot-for-slot, and checkpoints serialize them.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One named parameter tensor. `penalized` marks tensors that weight-norm
/// penalties apply to (weights yes, biases no).
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub penalized: bool,
}

/// An ordered collection of named tensors. Order is fixed at construction and
/// shared with gradient sets and optimizer slots, so iteration is always
/// deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    items: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { items: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor, penalized: bool) {
        self.items.push(Param {
            name: name.into(),
            value,
            penalized,
        });
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.items.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.items.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.items.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.items.iter_mut().find(|p| p.name == name)
    }

    pub fn at(&self, i: usize) -> &Param {
        &self.items[i]
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Param {
        &mut self.items[i]
    }

    /// Total element count across all tensors.
    pub fn numel(&self) -> usize {
        self.items.iter().map(|p| p.value.len()).sum()
    }

    /// A same-named, same-shaped set of zero tensors.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            items: self
                .items
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Tensor::zeros(p.value.shape()),
                    penalized: p.penalized,
                })
                .collect(),
        }
    }

    /// Checks that `other` mirrors this set name-for-name and shape-for-shape.
    pub fn check_mirror(&self, other: &ParamSet, op: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch {
                op,
                left: vec![self.len()],
                right: vec![other.len()],
            });
        }
        for (a, b) in self.items.iter().zip(other.items.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::ShapeMismatch {
                    op,
                    left: a.value.shape().to_vec(),
                    right: b.value.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// True when every element of every tensor is finite.
    pub fn all_finite(&self) -> bool {
        self.items
            .iter()
            .all(|p| p.value.data().iter().all(|v| v.is_finite()))
    }
}

/// Gradients mirror the parameter set exactly.
pub type Gradients = ParamSet;
