//! Cycle-consistent GAN dehazing on the CPU: haze synthesis from depth,
//! Matting Laplacian regularization, a small reverse-mode autodiff engine,
//! the generator/discriminator pair, training and evaluation.

// parameter checks are written as `!(x > 0.0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod gradcheck;
pub mod hazesynth;
pub mod image;
pub mod io;
pub mod losses;
pub mod matting;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod tensor;
pub mod toy;
pub mod trainer;
