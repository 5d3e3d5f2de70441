//! Few-shot pairwise reranking with LLM preferences.
//!
//! A first-stage run is reranked per query by comparing every pair of its
//! top documents twice, once in each presentation order. An order-consistent
//! answer gives a preference of 0 or 1; anything else gives 1/2. Documents
//! are sorted by their summed preferences. Prompts can carry in-context
//! examples: triples of a training query, one relevant passage and a hard
//! negative, drawn from the training queries most similar to the test query.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common choices.
//!
//! ```
//! use fewshot_prp::eval::jaccard;
//! let j = jaccard("Is CDG airport in main Paris?", "Which airport in Paris is closest to the city?");
//! assert!((j - 4.0 / 11.0).abs() < 1e-12);
//! ```

pub mod analyzer;
pub mod backend;
pub mod config;
pub mod data;
pub mod dense;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod icl;
pub mod num;
pub mod pipeline;
pub mod prompt;
pub mod rerank;
pub mod sparse;
pub mod synthetic;
pub mod transport;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use num::Real;

/// BM25 and cosine hits in double precision.
pub type Hit = sparse::ScoredHit<f64>;
pub type Hit32 = sparse::ScoredHit<f32>;
pub type Embeddings = dense::EmbeddingStore<f64>;
pub type Embeddings32 = dense::EmbeddingStore<f32>;
pub type TTest = eval::TTest<f64>;
pub type Correlation = eval::Correlation<f64>;

pub use backend::{Backend, BackendRequest, BackendResponse, CachedBackend, HttpBackend, OracleWorld};
pub use config::ExperimentConfig;
pub use data::{Corpus, Document, Qrels, Query, QuerySet, RunEntry, RunList};
pub use icl::{IclExample, SamplerConfig, Selector};
pub use prompt::{PromptMode, PromptTemplate};
pub use rerank::{Judge, Preference};
pub use sparse::InvertedIndex;
