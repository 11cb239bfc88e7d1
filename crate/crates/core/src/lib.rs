//! Content-based reconstruction of cross-platform user networks, with
//! temporal graphs, discourse communities and narrative migration analysis.

pub mod affiliation;
pub mod clustering;
pub mod community;
pub mod corpus;
pub mod downstream;
pub mod embedding;
pub mod error;
pub mod graph;
pub mod hnsw;
pub mod migration;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type EmbeddingMatrixF32 = embedding::EmbeddingMatrix<f32>;
pub type EmbeddingMatrixF64 = embedding::EmbeddingMatrix<f64>;
pub type ClusterModelF32 = clustering::ClusterModel<f32>;
pub type ClusterModelF64 = clustering::ClusterModel<f64>;
pub type HnswF32 = hnsw::Hnsw<f32>;
pub type HnswF64 = hnsw::Hnsw<f64>;
