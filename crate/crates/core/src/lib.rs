//! GAN training laboratory with controlled stochasticity.
//!
//! The crate trains small generator/discriminator pairs under three regimes
//! (deterministic full-batch with a fixed latent set, mini-batch gradients,
//! latent-noise injection) and scores the result with a bidirectional 1-NN
//! protocol: generated-to-data distances measure overfitting (precision),
//! data-to-generated distances measure mode drop (recall).

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod network;
pub mod optimizer;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
