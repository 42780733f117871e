//! Dense rank-4 tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Tensor`] is a plain value (shape, data, optional gradient slot). Graphs
//! are recorded on a [`Tape`], which holds its own copies of leaf values and
//! hands out [`Var`] handles. Gradients computed by [`Tape::backward`] are
//! accumulated on the tape's leaves and can be pulled back into the owning
//! tensors with [`Tensor::accumulate_grad`].

mod kernels;
mod tape;

pub use kernels::conv_output_dim;
pub use kernels::conv_transpose_output_dim;
pub use tape::{Activation, Tape, Var};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// (batch, channel, height, width)
pub type Shape = [usize; 4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("data length {len} does not match shape {shape:?} ({expected} elements)")]
    DataLength { shape: Shape, len: usize, expected: usize },
    #[error("backward requires a scalar (1x1x1x1) loss, got shape {0:?}")]
    NonScalarLoss(Shape),
    #[error("gradient length {got} does not match tensor length {expected}")]
    GradientLength { expected: usize, got: usize },
    #[error("invalid argument to {op}: {detail}")]
    Argument { op: &'static str, detail: String },
}

pub(crate) fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected = numel(&shape);
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; numel(&shape)],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> f32) -> Self {
        let data = (0..numel(&shape)).map(&mut f).collect();
        Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    /// I.i.d. Gaussian entries with the given mean and standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, mean: f32, std: f32, rng: &mut R) -> Self {
        let normal = Normal::new(mean, std).expect("standard deviation must be finite and >= 0");
        Self::from_fn(shape, |_| normal.sample(rng))
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: Shape, lo: f32, hi: f32, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.random_range(lo..hi))
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Adds `grad` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, grad: &[f32]) -> Result<(), TensorError> {
        if grad.len() != self.data.len() {
            return Err(TensorError::GradientLength {
                expected: self.data.len(),
                got: grad.len(),
            });
        }
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(grad).for_each(|(a, b)| *a += b),
            None => self.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index into NCHW storage.
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        let [_, ch, h, w] = self.shape;
        self.data[((n * ch + c) * h + y) * w + x]
    }

    /// Copies one batch item out as a 1xCxHxW tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        let len = c * h * w;
        Tensor {
            shape: [1, c, h, w],
            data: self.data[n * len..(n + 1) * len].to_vec(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Stacks same-shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor, TensorError> {
        let first = items.first().ok_or_else(|| TensorError::Argument {
            op: "stack",
            detail: "no tensors to stack".into(),
        })?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        let mut batch = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(TensorError::Shape {
                    op: "stack",
                    detail: format!("{:?} vs {:?}", t.shape, first.shape),
                });
            }
            batch += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Tensor::new([batch, c, h, w], data)
    }
}
