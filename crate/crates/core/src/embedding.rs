//! Fixed-dimension vectors for methods and queries.
//!
//! Text longer than the encoder's token limit is split into chunks, each
//! chunk is embedded, the chunk vectors are max-pooled and the result is
//! L2-normalized once, after pooling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::MethodRecord;
use crate::providers::{embed, provider_info, EmbeddingProvider, ProviderError};

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("no vectors to combine")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalize(&self) -> Result<Self, EmbeddingError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(Self {
            values: self.values.iter().map(|v| v / n).collect(),
            normalized: true,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            normalized: false,
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// A contiguous slice of a method's text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub text: String,
    pub index: usize,
}

/// Split `text` into consecutive chunks of at most `max_tokens` tokens.
///
/// Splits fall on line boundaries when a line fits, else on whitespace, else
/// between characters. A single character that alone exceeds the limit
/// still forms a chunk, so splitting always terminates. Concatenating the
/// chunks reproduces `text` exactly.
pub fn chunk_text(text: &str, max_tokens: usize, token_counter: &dyn Fn(&str) -> usize) -> Vec<Chunk> {
    let max_tokens = max_tokens.max(1);
    let fits = |s: &str| token_counter(s) <= max_tokens;
    let mut pieces = Vec::new();
    pack(text, Granularity::Line, &fits, &mut pieces);
    pieces
        .into_iter()
        .enumerate()
        .map(|(index, t)| Chunk {
            text: t.to_string(),
            index,
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Granularity {
    Line,
    Word,
    Char,
}

impl Granularity {
    fn finer(self) -> Option<Self> {
        match self {
            Granularity::Line => Some(Granularity::Word),
            Granularity::Word => Some(Granularity::Char),
            Granularity::Char => None,
        }
    }

    /// Byte offsets where units end.
    fn boundaries(self, text: &str) -> Vec<usize> {
        let mut ends = Vec::new();
        match self {
            Granularity::Line => {
                ends.extend(text.match_indices('\n').map(|(i, _)| i + 1));
            }
            Granularity::Word => {
                let mut prev_ws = false;
                for (i, c) in text.char_indices() {
                    if prev_ws && !c.is_whitespace() {
                        ends.push(i);
                    }
                    prev_ws = c.is_whitespace();
                }
            }
            Granularity::Char => {
                ends.extend(text.char_indices().skip(1).map(|(i, _)| i));
            }
        }
        if ends.last() != Some(&text.len()) && !text.is_empty() {
            ends.push(text.len());
        }
        ends
    }
}

fn pack<'a>(text: &'a str, level: Granularity, fits: &dyn Fn(&str) -> bool, out: &mut Vec<&'a str>) {
    let mut start = 0;
    let mut end = 0;
    for unit_end in level.boundaries(text) {
        if fits(&text[start..unit_end]) {
            end = unit_end;
            continue;
        }
        if end > start {
            out.push(&text[start..end]);
        }
        let unit = &text[end..unit_end];
        if fits(unit) {
            start = end;
            end = unit_end;
            continue;
        }
        match level.finer() {
            Some(finer) => pack(unit, finer, fits, out),
            None => out.push(unit),
        }
        start = unit_end;
        end = unit_end;
    }
    if end > start {
        out.push(&text[start..end]);
    }
}

/// Componentwise maximum.
pub fn max_pool(vectors: &[EmbeddingVector]) -> Result<EmbeddingVector, EmbeddingError> {
    let first = vectors.first().ok_or(EmbeddingError::EmptyInput)?;
    let mut out = first.values.clone();
    for v in &vectors[1..] {
        if v.dim() != out.len() {
            return Err(EmbeddingError::DimMismatch {
                expected: out.len(),
                got: v.dim(),
            });
        }
        for (o, x) in out.iter_mut().zip(&v.values) {
            *o = o.max(*x);
        }
    }
    Ok(EmbeddingVector {
        values: out,
        normalized: false,
    })
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Chunk, embed, pool and normalize arbitrary text (method body or query).
pub fn embed_text(text: &str, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector, EmbeddingError> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyInput);
    }
    let info = provider_info(provider)?;
    let chunks = chunk_text(text, info.max_tokens, &|s| provider.count_tokens(s));
    let texts: Vec<String> = chunks
        .into_iter()
        .map(|c| c.text)
        .filter(|t| !t.trim().is_empty())
        .collect();
    let raw = embed(&texts, provider)?;
    let vectors = raw
        .into_iter()
        .map(EmbeddingVector::new)
        .collect::<Result<Vec<_>, _>>()?;
    let pooled = if vectors.len() == 1 {
        vectors.into_iter().next().expect("one vector")
    } else {
        max_pool(&vectors)?
    };
    pooled.normalize()
}

pub fn embed_method(method: &MethodRecord, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector, EmbeddingError> {
    embed_text(&method.source_text, provider)
}

/// Embed methods in parallel; output order matches input order.
pub fn embed_methods(
    methods: &[MethodRecord],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    methods.par_iter().map(|m| embed_method(m, provider)).collect()
}
