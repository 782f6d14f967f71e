//! Progressive trit-plane coding of Gaussian latent tensors.

pub mod cdr;
pub mod coder;
pub mod crr;
pub mod error;
pub mod eval;
pub mod latent;
pub mod model_io;
pub mod pipeline;
pub mod selftest;
pub mod nn;
pub mod tensor;
pub mod tritplane;

pub use error::{Error, Result};
