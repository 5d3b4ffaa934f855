//! Toolkit for picking the best dense retriever for an unlabeled corpus.
//!
//! The core pipeline generates pseudo-queries from sampled documents, fuses
//! the pool's rankings, asks an LLM for pseudo-judgments and a reranked
//! reference list, and scores every retriever against those proxies. A QPP
//! baseline suite and a ground-truth evaluator round out the toolkit.

pub mod baselines;
pub mod config;
pub mod data;
pub mod evaluator;
pub mod fusion;
pub mod larmor;
pub mod llm;
pub mod metrics;
pub mod retrieval;
pub mod rundir;
