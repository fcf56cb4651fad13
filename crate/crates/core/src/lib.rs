//! Semantically coherent convolution kernels for sentence classification.
//!
//! The pipeline clusters corpus k-grams in a joint Word2Vec + SentiWordNet
//! space, ties every convolution kernel to the span of one cluster's members,
//! and trains the per-member weights jointly with a softmax classifier. The
//! same machinery scores filter coherence, attributes predictions to words and
//! reuses trained kernels on a new dataset.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root pin the common `f64` instantiations.

pub mod cluster;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod explain;
pub mod model;
pub mod scalar;
pub mod select;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;














pub use train::TrainReport;

pub type WordEmbeddingTable = embed::WordEmbeddingTable<f64>;
pub type KGramRepr = embed::KGramRepr<f64>;
pub type KGramPool = select::KGramPool<f64>;
pub type Clustering = cluster::Clustering<f64>;
pub type CoherenceReport = cluster::CoherenceReport<f64>;
pub type KernelBank = model::KernelBank<f64>;
pub type Classifier = model::Classifier<f64>;
pub type Model = model::Model<f64>;
pub type Checkpoint = model::Checkpoint<f64>;

pub type WordEmbeddingTableF32 = embed::WordEmbeddingTable<f32>;
pub type ModelF32 = model::Model<f32>;
