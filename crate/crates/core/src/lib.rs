//! Logit-level uncertainty quantification for autoregressive decoders.
//!
//! The crate is organised around the data flow of a repeated-generation
//! experiment:
//!
//! - [`metrics`]: temperature-scaled distributions, logit alignment and the four
//!   pairwise metrics (cosine similarity, KL, JS, MAE).
//! - [`decoder`]: a seeded synthetic decoder with three archetype profiles and the
//!   experiment-grid sweep.
//! - [`embedding`]: class-token/mean pooling and an exact t-SNE.
//! - [`analysis`]: per-model normalization, summary statistics, Pearson
//!   correlations and operating-point selection.
//! - [`store`]: the binary logit-record format, run manifests and CSV schemas.
//!
//! Numerical kernels are generic over [`Scalar`] (`f32` or `f64`). The pipeline
//! stores logits as `f32` and computes metrics in `f64`; the aliases below name
//! the concrete types it uses.

pub mod analysis;
pub mod decoder;
pub mod embedding;
mod error;
pub mod metrics;
mod scalar;
pub mod store;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Logit tensor as stored on disk.
pub type StoredTensor = metrics::LogitTensor<f32>;
/// Logit tensor used for metric computation.
pub type Tensor = metrics::LogitTensor<f64>;
/// Probability vector in analysis precision.
pub type Probs = metrics::ProbVector<f64>;
/// Run group in analysis precision.
pub type Group = metrics::RunGroup<f64>;
/// Embedding set in analysis precision.
pub type Embeddings = embedding::EmbeddingSet<f64>;
/// 2D projection in analysis precision.
pub type Projection = embedding::Projection2D<f64>;
