//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Operations are recorded on a [`Tape`]; values are computed eagerly and
//! [`Tape::backward`] walks the tape in reverse. Trainable state lives in a
//! [`ParamStore`] outside the tape, so a fresh tape is built for every forward
//! pass and parameters are read into it as leaves.
//!
//! 5D tensors are `(batch, channel, x, y, z)`; each `(batch, channel)` block is
//! stored as an x-fastest volume, matching [`crate::Volume3D`].

pub mod check;
mod kernels;
mod param;
mod tape;

pub use param::{
    kaiming_init, load_checkpoint, save_checkpoint, OptimizerConfig, ParamId, ParamStore,
    Parameter,
};
pub use tape::{BatchStats, CustomOp, Gradients, Tape, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// `(batch, channels, [x, y, z])` of a 5D tensor.
    pub fn dims5(&self) -> Result<(usize, usize, [usize; 3])> {
        match self.shape[..] {
            [b, c, x, y, z] => Ok((b, c, [x, y, z])),
            _ => Err(Error::Shape(format!(
                "expected a 5D (batch, channel, x, y, z) tensor, got {:?}",
                self.shape
            ))),
        }
    }
}

#[cfg(test)]
mod tests;
