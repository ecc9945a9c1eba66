//! Ranking corpus methods against a query: exact cosine search over
//! normalized embeddings, and Okapi BM25 as the lexical baseline.

mod bm25;
mod dense;

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{bm25_tokenize, Bm25Index, Bm25Params};
pub use dense::DenseIndex;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("cannot build an index from zero methods")]
    EmptyIndex,
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate method id {0}")]
    DuplicateMethodId(String),
    #[error("vector for {0} is not normalized")]
    NotNormalized(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub method_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retriever {
    Dense,
    Bm25,
}

pub fn build_dense_index(
    bug_id: &str,
    embeddings: Vec<(String, crate::embedding::EmbeddingVector)>,
) -> Result<DenseIndex, RetrievalError> {
    DenseIndex::build(bug_id, embeddings)
}

pub fn query_dense(
    index: &DenseIndex,
    query: &crate::embedding::EmbeddingVector,
    k: usize,
) -> Result<Vec<RetrievalResult>, RetrievalError> {
    index.query(query, k)
}

pub fn query_bm25(index: &Bm25Index, query_text: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
    index.query(query_text, k)
}

/// Sort `(method_id, score)` by score descending, ties by id ascending, keep
/// the first `k` and assign ranks.
pub(crate) fn rank_top_k(mut scored: Vec<(&str, f64)>, k: usize) -> Vec<RetrievalResult> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (id, score))| RetrievalResult {
            method_id: id.to_string(),
            score,
            rank: i + 1,
        })
        .collect()
}

/// Ordering used for ties everywhere: higher score first, then method id.
pub fn compare_results(a: &RetrievalResult, b: &RetrievalResult) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.method_id.cmp(&b.method_id))
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    bug_id: &'a str,
    method_id: &'a str,
    score: f64,
    rank: usize,
    retriever: Retriever,
}

/// One JSON line per candidate:
/// `{bug_id, method_id, score, rank, retriever}`.
pub fn write_retrieval_dump<W: Write>(
    mut out: W,
    bug_id: &str,
    retriever: Retriever,
    results: &[RetrievalResult],
) -> std::io::Result<()> {
    for r in results {
        serde_json::to_writer(
            &mut out,
            &DumpRecord {
                bug_id,
                method_id: &r.method_id,
                score: r.score,
                rank: r.rank,
                retriever,
            },
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
