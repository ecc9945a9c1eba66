use std::collections::HashSet;

use super::{rank_top_k, RetrievalError, RetrievalResult};
use crate::embedding::EmbeddingVector;

const NORM_TOLERANCE: f64 = 1e-6;

/// Exact nearest-neighbour index over normalized vectors. Scores are dot
/// products, which equal cosine similarity for unit vectors.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    bug_id: String,
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    dim: usize,
}

impl DenseIndex {
    pub fn build(bug_id: &str, embeddings: Vec<(String, EmbeddingVector)>) -> Result<Self, RetrievalError> {
        let dim = embeddings.first().ok_or(RetrievalError::EmptyIndex)?.1.dim();
        let mut seen = HashSet::with_capacity(embeddings.len());
        let mut ids = Vec::with_capacity(embeddings.len());
        let mut vectors = Vec::with_capacity(embeddings.len());
        for (id, v) in embeddings {
            if v.dim() != dim {
                return Err(RetrievalError::DimMismatch { expected: dim, got: v.dim() });
            }
            if !v.is_normalized() || (v.norm() - 1.0).abs() > NORM_TOLERANCE {
                return Err(RetrievalError::NotNormalized(id));
            }
            if !seen.insert(id.clone()) {
                return Err(RetrievalError::DuplicateMethodId(id));
            }
            ids.push(id);
            vectors.push(v);
        }
        Ok(Self {
            bug_id: bug_id.to_string(),
            ids,
            vectors,
            dim,
        })
    }

    pub fn bug_id(&self) -> &str {
        &self.bug_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Top `min(k, len)` entries by cosine similarity to `query`.
    pub fn query(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let q = if query.is_normalized() {
            query.clone()
        } else {
            query
                .normalize()
                .map_err(|_| RetrievalError::NotNormalized("query".into()))?
        };
        let scored = self
            .ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| (id.as_str(), v.dot(&q)))
            .collect();
        Ok(rank_top_k(scored, k))
    }
}
