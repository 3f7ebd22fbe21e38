//! Feature-domain adaptive contrastive distillation for single-image
//! super-resolution.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for training,
//! `f64` for gradient verification); the aliases below pin the common
//! instantiations.

pub mod datapipe;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor4;

pub type Tensor4f = Tensor4<f32>;
pub type Tensor4d = Tensor4<f64>;
pub type ModelF = models::Model<f32>;
pub type ModelD = models::Model<f64>;
