//! Tri-modal prognosis modeling: vision-conditioned dual-alignment fusion of
//! image embeddings, report-text embeddings, and clinical tabular features,
//! with the full training, evaluation, and ablation stack built around it.
//!
//! The numeric core is generic over the scalar type (see [`scalar::Scalar`]);
//! the aliases below fix f64, which is what every shipped driver uses.
//! Embeddings arrive as 32-bit files and are widened on ingestion.

pub mod autodiff;
pub mod error;
pub mod scalar;

pub use error::{Error, Result};

/// Scalar type used by the shipped pipeline.
pub type Real = f64;

/// Dense f64 tensor.
pub type Tensor = autodiff::Tensor<Real>;
/// Recording tape for f64 tensors.
pub type Tape = autodiff::Tape<Real>;
/// Gradient map from a backward pass.
pub type Gradients = autodiff::Gradients<Real>;

/// Deterministic RNG used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha12Rng;
