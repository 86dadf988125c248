//! A small CNN training stack built around a learnable color space transform.
//!
//! The front of the network applies a 3x3 matrix `W` to every pixel's RGB
//! vector before a conventional conv/pool/dense trunk. `W` can be a single
//! learned parameter, predicted per image by a small head, or a fixed matrix
//! fitted from channel statistics (KL rotation / whitening). Everything —
//! tensors, kernels, layers, optimizer, data pipeline — is implemented here
//! from scratch on `Vec<T>` storage, at `f32` for training and `f64` for
//! gradient checking.

pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Fill, Tensor};
