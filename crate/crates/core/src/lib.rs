//! Medical forum mining: sentiment classification with a from-scratch
//! CNN-LSTM-CNN, similar-post retrieval over disease, symptom and text
//! similarity, and treatment suggestion gated on a score threshold.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the pipeline and CLI use.

pub mod classifier;
pub mod concepts;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod retrieval;
pub mod scalar;
pub mod suggestion;
pub mod textprep;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default floating-point type.
pub type Real = f64;

pub type Tensor = neural::Tensor2D<Real>;
pub type Network = neural::Network<Real>;
pub type Model = classifier::Model<Real>;
pub type Embeddings = embeddings::EmbeddingTable<Real>;
pub type PostMatrix = textprep::PostMatrix<Real>;
pub type Prediction = classifier::Prediction<Real>;
