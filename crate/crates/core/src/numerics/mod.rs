//! Dense tensors, differentiable primitives and the finite-difference checker.

pub mod dten;
pub mod gradcheck;
pub mod ops;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, rel_err, GradReport};
pub use ops::Padding;
pub use scalar::Scalar;
pub use tensor::{Tensor, MAX_RANK};

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<S = f32> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
    }

    pub fn cast<T: Scalar>(&self) -> Parameter<T> {
        Parameter {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}
