use std::collections::BTreeMap;

use rand::Rng;

use super::{Gradients, Real, Tensor, TensorError};

/// Named collection of learnable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<(), TensorError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        self.tensors.insert(name, t.with_requires_grad(true));
        Ok(())
    }

    /// Inserts a `fan_in × fan_out` matrix drawn from
    /// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)).
    pub fn init_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::lit(rng.gen_range(-bound..bound)))
            .collect();
        self.insert(name, Tensor::new(fan_in, fan_out, data)?)
    }

    /// Inserts a `rows × dim` lookup table drawn from
    /// uniform(-sqrt(1/dim), +sqrt(1/dim)).
    pub fn init_embedding<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        let bound = (1.0 / dim.max(1) as f64).sqrt();
        let data = (0..rows * dim)
            .map(|_| T::lit(rng.gen_range(-bound..bound)))
            .collect();
        self.insert(name, Tensor::new(rows, dim, data)?)
    }

    pub fn init_zeros(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
    ) -> Result<(), TensorError> {
        self.insert(name, Tensor::zeros(rows, cols))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Adds a backward pass's gradients into each tensor's grad buffer.
    /// Tensors the graph never touched receive zeros.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (name, t) in self.tensors.iter_mut() {
            match grads.param(name) {
                Some(g) => t.accumulate_grad(g),
                None if t.grad().is_none() => t.zero_grad(),
                None => {}
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast::<U>()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}
