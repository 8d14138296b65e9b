use super::{Scalar, Tensor};
use rand::Rng;

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::filled(shape, T::one()))
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier<R: Rng>(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = xavier_bound(fan_in, fan_out);
        let value = Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)));
        Self::new(name, value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Parameter<U> {
        Parameter {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
            m: self.m.cast(),
            v: self.v.cast(),
        }
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
