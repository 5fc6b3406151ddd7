//! Dense tensors and a small reverse-mode autodiff tape.

mod dense;
mod tape;

pub use dense::Tensor;
pub use tape::{softmax_slice, BinaryOp, ReduceOp, Tape, UnaryOp, Var};

use crate::error::{Error, Result};

/// A trainable value with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    value: Tensor,
    grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn frozen(value: Tensor) -> Self {
        Self {
            trainable: false,
            ..Self::new(value)
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "Parameter::set_value",
                lhs: self.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.value = value;
        Ok(())
    }

    /// Places the current value on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Var {
        tape.leaf(self.value.clone())
    }

    /// Adds the gradient that `tape` holds for `var` (if any).
    pub fn absorb(&mut self, tape: &Tape, var: Var) -> Result<()> {
        if let Some(g) = tape.grad(var) {
            self.accumulate(&g)?;
        }
        Ok(())
    }

    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        self.grad = self.grad.zip_map(g, |a, b| a + b)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = Tensor::zeros(self.value.shape());
    }

    /// Plain gradient-descent step; no-op when frozen.
    pub fn sgd_step(&mut self, lr: f32) {
        if !self.trainable {
            return;
        }
        self.value = self
            .value
            .zip_map(&self.grad, |v, g| v - lr * g)
            .expect("gradient shape tracks value shape");
    }
}
