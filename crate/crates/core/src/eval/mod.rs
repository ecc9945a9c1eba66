//! End-to-end pipeline per bug, ablation variants, batch evaluation with
//! Top-N / MAP / MRR, retrieval-depth sweeps and API cost accounting.

mod batch;
mod metrics;
mod pipeline;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, CoverageFormat, MethodKey};
use crate::embedding::EmbeddingError;
use crate::providers::ProviderError;
use crate::query::QueryError;
use crate::rerank::RerankError;
use crate::retrieval::{Bm25Params, RetrievalError};

pub use batch::{ablate, evaluate, load_bugset, sensitivity_sweep, BugRecord, BugStatus, RunOptions, RunReport};
pub use metrics::{average_precision, cost_usd, reciprocal_rank, score_ranking, summarize, BugScore, EvalSummary, TOP_N};
pub use pipeline::{localize, prepare_bug, BugOutcome, PreparedBug, Providers, Stages};

pub const DEFAULT_RETRIEVAL_K: usize = 40;
pub const DEFAULT_FINAL_LIST_SIZE: usize = 10;
/// USD per million input tokens.
pub const DEFAULT_PRICE_INPUT_PER_MTOK: f64 = 0.15;
/// USD per million output tokens.
pub const DEFAULT_PRICE_OUTPUT_PER_MTOK: f64 = 0.60;
pub const DEFAULT_CHAT_MODEL: &str = "gpt-4.1-mini";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("relevant set is empty")]
    EmptyRelevantSet,
    #[error("bug set at {0} contains no bug cases")]
    EmptyBugset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bug {bug_id}: {reason}")]
    InvalidBug { bug_id: String, reason: String },
    #[error("bug {0}: no covered method could be located in the source roots")]
    EmptyCorpus(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

pub(crate) fn io_error(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Query, dense retrieval, rerank.
    Full,
    /// Raw test code and stack traces stand in for the generated query.
    NoQuery,
    /// Generated query against BM25 instead of embeddings, then rerank.
    Bm25,
    /// Dense retrieval order truncated to the final list size.
    NoRerank,
    /// Full pipeline with stack traces left out of the extraction prompt.
    NoStackTrace,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoQuery,
        Variant::Bm25,
        Variant::NoRerank,
        Variant::NoStackTrace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoQuery => "no_query",
            Variant::Bm25 => "bm25",
            Variant::NoRerank => "no_rerank",
            Variant::NoStackTrace => "no_stack_trace",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                EvalError::InvalidConfig(format!(
                    "unknown variant `{s}`, expected one of: {}",
                    Variant::ALL.map(Variant::as_str).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub retrieval_k: usize,
    pub final_list_size: usize,
    pub variant: Variant,
    /// Model id sent with chat requests; empty uses the provider's own.
    pub chat_model: String,
    /// When set, the embedding provider must report this model id.
    pub embedding_model: String,
    pub price_input_per_mtok: f64,
    pub price_output_per_mtok: f64,
    pub max_stack_lines: usize,
    pub rerank_parse_retries: u32,
    pub bm25_k1: f64,
    pub bm25_b: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let bm25 = Bm25Params::default();
        Self {
            retrieval_k: DEFAULT_RETRIEVAL_K,
            final_list_size: DEFAULT_FINAL_LIST_SIZE,
            variant: Variant::Full,
            chat_model: DEFAULT_CHAT_MODEL.to_string(),
            embedding_model: String::new(),
            price_input_per_mtok: DEFAULT_PRICE_INPUT_PER_MTOK,
            price_output_per_mtok: DEFAULT_PRICE_OUTPUT_PER_MTOK,
            max_stack_lines: 50,
            rerank_parse_retries: 1,
            bm25_k1: bm25.k1,
            bm25_b: bm25.b,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidConfig(m));
        if self.final_list_size == 0 {
            return bad("final_list_size must be at least 1".into());
        }
        if self.retrieval_k < self.final_list_size {
            return bad(format!(
                "retrieval_k ({}) must be at least final_list_size ({})",
                self.retrieval_k, self.final_list_size
            ));
        }
        for (name, p) in [
            ("price_input_per_mtok", self.price_input_per_mtok),
            ("price_output_per_mtok", self.price_output_per_mtok),
        ] {
            if !(p.is_finite() && p >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {p}"));
            }
        }
        if !(self.bm25_k1 >= 0.0 && (0.0..=1.0).contains(&self.bm25_b)) {
            return bad(format!("bm25 needs k1 >= 0 and 0 <= b <= 1, got k1={} b={}", self.bm25_k1, self.bm25_b));
        }
        Ok(())
    }

    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.bm25_k1,
            b: self.bm25_b,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }
}

/// One benchmark bug as described by its manifest file. Relative paths are
/// resolved against the manifest's directory.
///
/// ```json
/// {"bug_id": "Lang-1", "failing_tests": "tests.json",
///  "coverage": "coverage.xml", "coverage_format": "cobertura-xml",
///  "source_roots": ["src"],
///  "ground_truth": [{"class_fqn": "a.B", "method_name": "m", "param_types": ["int"]}]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BugCase {
    pub bug_id: String,
    pub failing_tests: PathBuf,
    pub coverage: PathBuf,
    pub coverage_format: CoverageFormat,
    pub source_roots: Vec<PathBuf>,
    pub ground_truth: Vec<MethodKey>,
}

impl BugCase {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let raw = fs::read(path).map_err(io_error(path))?;
        let mut case: BugCase = serde_json::from_slice(&raw).map_err(|source| EvalError::Json {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        case.failing_tests = base.join(&case.failing_tests);
        case.coverage = base.join(&case.coverage);
        for root in &mut case.source_roots {
            *root = base.join(&*root);
        }
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |reason: &str| EvalError::InvalidBug {
            bug_id: self.bug_id.clone(),
            reason: reason.to_string(),
        };
        if self.bug_id.trim().is_empty() {
            return Err(invalid("empty bug_id"));
        }
        if self.ground_truth.is_empty() {
            return Err(invalid("ground_truth is empty"));
        }
        if self.source_roots.is_empty() {
            return Err(invalid("no source_roots"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!((c.retrieval_k, c.final_list_size), (40, 10));
        assert_eq!((c.price_input_per_mtok, c.price_output_per_mtok), (0.15, 0.60));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn validation() {
        let c = PipelineConfig {
            retrieval_k: 5,
            ..PipelineConfig::default()
        };
        assert!(matches!(c.validate(), Err(EvalError::InvalidConfig(_))));
        let c = PipelineConfig {
            final_list_size: 0,
            retrieval_k: 0,
            ..PipelineConfig::default()
        };
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            price_output_per_mtok: -1.0,
            ..PipelineConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_value(v).unwrap(), v.as_str());
        }
        assert!("nope".parse::<Variant>().is_err());
    }

    #[test]
    fn bug_case_paths_resolve_against_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bug.json");
        fs::write(
            &path,
            r#"{"bug_id":"X-1","failing_tests":"t.json","coverage":"c.json","coverage_format":"simple-json",
                "source_roots":["src"],"ground_truth":[{"class_fqn":"a.B","method_name":"m"}]}"#,
        )
        .unwrap();
        let case = BugCase::load(&path).unwrap();
        assert_eq!(case.coverage, dir.path().join("c.json"));
        assert_eq!(case.source_roots, vec![dir.path().join("src")]);
        assert_eq!(case.ground_truth[0].param_types, None);
    }
}
