//! Diversity-aware news retrieval: dense and BM25 candidate retrieval, OPTICS
//! sentence clustering, coverage-based re-ranking and evaluation.

pub mod clustering;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod fetch;
pub mod metrics;
pub mod rerank;
pub mod retrieval;
pub mod synthetic;

pub use error::{Error, Result};
