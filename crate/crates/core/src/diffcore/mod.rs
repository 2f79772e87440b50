//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The substrate every other module builds on: tensors with recorded ops
//! ([`tensor`], [`ops`]), the backward walk ([`backward`]), batch
//! normalization with train/eval/capture modes ([`batchnorm`]), the Adam
//! optimizer ([`adam`]), and finite-difference verification ([`gradcheck`]).

pub mod adam;
pub mod backward;
pub mod batchnorm;
pub mod gradcheck;
pub mod ops;
pub mod tensor;

pub use adam::{Adam, AdamParams, AdamState};
pub use backward::{backward, GradientMap};
pub use batchnorm::{BatchNorm, BnCapture, Mode};
pub use gradcheck::{grad_check, relative_error};
pub use tensor::Tensor;
