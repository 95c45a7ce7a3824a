//! Differentiable Gaussianization layers, reparameterizations and forward
//! models for latent-space inverse problems.

pub mod autodiff;
pub mod error;
pub mod gaussianize;
pub mod gradcheck;
#[cfg(test)]
mod invariants;
pub mod invert;
pub mod linalg;
pub mod models;
pub mod optimize;
pub mod reparam;
pub mod scalar;
pub mod stage;
pub mod tensor;

pub use error::{Error, Result};
pub use stage::{Chain, Pullback, Stage};
pub use tensor::Tensor;
