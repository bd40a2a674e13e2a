//! Identity reference banks, multi-identity dataset assembly, benchmark
//! metrics and loss conformance checks for multi-subject personalization.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). Stored
//! embeddings are `f32`; metrics and losses are usually run in `f64`. The
//! aliases below name the common instantiations.

pub mod align;
pub mod bank;
pub mod cluster;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod retrieval;
pub mod scalar;
pub mod seed;
pub mod store;
pub mod synth;

pub use embedding::{cosine, dot, norm, similarity_matrix, BackendId, Embedding, EmbeddingMatrix, SimilarityMatrix};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Embedding32 = Embedding<f32>;
pub type Embedding64 = Embedding<f64>;
pub type EmbeddingMatrix32 = EmbeddingMatrix<f32>;
pub type EmbeddingMatrix64 = EmbeddingMatrix<f64>;
pub type SimilarityMatrix32 = SimilarityMatrix<f32>;
pub type SimilarityMatrix64 = SimilarityMatrix<f64>;
pub type ReferenceBank32 = bank::ReferenceBank<f32>;
pub type ReferenceBank64 = bank::ReferenceBank<f64>;
