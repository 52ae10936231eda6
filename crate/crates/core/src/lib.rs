//! Weight-level provenance testing for neural networks.
//!
//! Given two models, decide from their parameters (and optionally their
//! activations on random inputs) whether they descend from independent random
//! initializations. The constrained tests return exact p-values under
//! permutation-invariant training; the matching-based tests survive
//! output-preserving camouflage such as hidden-unit permutations and rotations
//! of the residual stream.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the statistics
//! themselves are always evaluated in `f64`.

pub mod error;
pub mod independence;
pub mod linalg;
pub mod matching;
pub mod model;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod simulate;
pub mod stats;
pub mod tensor_store;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use scalar::Scalar;
pub use stats::LogPValue;
pub use tensor_store::{ArchManifest, DType, Family, ModelBundle, Tensor, TensorMap};
pub use transforms::Permutation;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type GluMlp64 = model::GluMlpParams<f64>;
pub type GluMlp32 = model::GluMlpParams<f32>;
pub type Transformer64 = model::Transformer<f64>;
pub type Transformer32 = model::Transformer<f32>;
