use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Ordered collection of named parameter tensors.
///
/// Each store carries a process-unique id so a [`crate::Graph`] can tell
/// stores apart when binding; clones get a new id.
#[derive(Debug)]
pub struct ParamStore<T: Real = f32> {
    id: u64,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            names: self.names.clone(),
            tensors: self.tensors.clone(),
        }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            id: fresh_id(),
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Adds a trainable tensor and returns its index.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(TensorError::invalid("param_store", format!("duplicate name {name}")));
        }
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Marks every tensor trainable or frozen. Frozen tensors bind as
    /// constants and never receive gradients.
    pub fn set_trainable(&mut self, on: bool) {
        for t in &mut self.tensors {
            t.set_requires_grad(on);
            if !on {
                t.clear_grad();
            }
        }
    }

    /// Copies the store into another element type, keeping names and order.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            id: fresh_id(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}
