//! Method-level fault localization: describe the failing functionality with
//! an LLM, retrieve covered methods by embedding similarity, and let the LLM
//! re-rank the candidates.

pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod providers;
pub mod query;
pub mod rerank;
pub mod retrieval;
