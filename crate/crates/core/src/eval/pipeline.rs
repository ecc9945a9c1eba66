use std::fs;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::metrics::{score_ranking, BugScore};
use super::{io_error, BugCase, EvalError, PipelineConfig, Variant};
use crate::corpus::{build_corpus, parse_coverage, CorpusBuild};
use crate::embedding::{embed_methods, embed_text, EmbeddingVector};
use crate::providers::{provider_info, ChatProvider, EmbeddingProvider, RetryPolicy, Usage};
use crate::query::{
    assemble_bundle, extract_functionality, raw_failure_text, ExtractionOptions, FailingTestsFile, FailureBundle,
    FunctionalityQuery,
};
use crate::rerank::{rerank, retrieval_order, FinalRanking, RerankCandidate, RerankOptions};
use crate::retrieval::{Bm25Index, DenseIndex, RetrievalResult, Retriever};

#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub chat: &'a dyn ChatProvider,
    pub embedder: &'a dyn EmbeddingProvider,
    pub retry: RetryPolicy,
}

impl<'a> Providers<'a> {
    pub fn new(chat: &'a dyn ChatProvider, embedder: &'a dyn EmbeddingProvider) -> Self {
        Self {
            chat,
            embedder,
            retry: RetryPolicy::default(),
        }
    }
}

/// A bug with its inputs loaded: deduplicated failing tests and the corpus
/// of covered methods.
#[derive(Debug, Clone)]
pub struct PreparedBug {
    pub case: BugCase,
    pub bundle: FailureBundle,
    pub corpus: CorpusBuild,
}

pub fn prepare_bug(case: &BugCase) -> Result<PreparedBug, EvalError> {
    case.validate()?;
    let raw = fs::read(&case.failing_tests).map_err(io_error(&case.failing_tests))?;
    let tests: FailingTestsFile = serde_json::from_slice(&raw).map_err(|source| EvalError::Json {
        path: case.failing_tests.display().to_string(),
        source,
    })?;
    let bundle = assemble_bundle(&case.bug_id, &tests.tests)?;

    let raw = fs::read(&case.coverage).map_err(io_error(&case.coverage))?;
    let mut coverage = parse_coverage(&raw, case.coverage_format)?;
    coverage.bug_id = case.bug_id.clone();
    if coverage.failing_test_names.is_empty() {
        coverage.failing_test_names = tests.tests.iter().map(|t| t.test_fqn.clone()).collect();
    }

    let mut corpus = build_corpus(&coverage, &case.source_roots)?;
    corpus.corpus.bug_id = case.bug_id.clone();
    if corpus.corpus.is_empty() {
        return Err(EvalError::EmptyCorpus(case.bug_id.clone()));
    }
    if !corpus.unresolved.is_empty() {
        debug!("{}: {} covered keys without source", case.bug_id, corpus.unresolved.len());
    }
    for key in &case.ground_truth {
        if !corpus.corpus.methods.iter().any(|m| key.matches(m)) {
            warn!("{}: ground-truth method {key} is not in the corpus", case.bug_id);
        }
    }
    Ok(PreparedBug {
        case: case.clone(),
        bundle,
        corpus,
    })
}

enum Searcher {
    Dense { index: DenseIndex, query: EmbeddingVector },
    Lexical(Bm25Index),
}

/// The k-independent part of a run: query text and a ready index. Reused
/// across retrieval depths.
pub struct Stages {
    pub query: FunctionalityQuery,
    searcher: Searcher,
}

impl Stages {
    pub fn build(bug: &PreparedBug, config: &PipelineConfig, providers: &Providers) -> Result<Self, EvalError> {
        let query = match config.variant {
            Variant::NoQuery => FunctionalityQuery {
                text: raw_failure_text(&bug.bundle, true, config.max_stack_lines),
                model_id: String::new(),
                usage: Usage::default(),
            },
            variant => {
                let options = ExtractionOptions {
                    include_stack_trace: variant != Variant::NoStackTrace,
                    max_stack_lines: config.max_stack_lines,
                    model_id: config.chat_model.clone(),
                    retry: providers.retry,
                    ..ExtractionOptions::default()
                };
                extract_functionality(&bug.bundle, providers.chat, &options)?
            }
        };

        let methods = &bug.corpus.corpus.methods;
        let searcher = if config.variant == Variant::Bm25 {
            let docs: Vec<(String, String)> = methods
                .iter()
                .map(|m| (m.method_id.clone(), m.source_text.clone()))
                .collect();
            Searcher::Lexical(Bm25Index::build(&docs, config.bm25_params())?)
        } else {
            let info = provider_info(providers.embedder)?;
            if !config.embedding_model.is_empty() && info.model_id != config.embedding_model {
                return Err(EvalError::InvalidConfig(format!(
                    "embedding provider serves `{}`, config expects `{}`",
                    info.model_id, config.embedding_model
                )));
            }
            let vectors = embed_methods(methods, providers.embedder)?;
            let entries = methods.iter().map(|m| m.method_id.clone()).zip(vectors).collect();
            let index = DenseIndex::build(&bug.case.bug_id, entries)?;
            let query_vec = embed_text(&query.text, providers.embedder)?;
            Searcher::Dense { index, query: query_vec }
        };
        Ok(Self { query, searcher })
    }

    pub fn retriever(&self) -> Retriever {
        match self.searcher {
            Searcher::Dense { .. } => Retriever::Dense,
            Searcher::Lexical(_) => Retriever::Bm25,
        }
    }

    pub fn search(&self, k: usize) -> Result<Vec<RetrievalResult>, EvalError> {
        Ok(match &self.searcher {
            Searcher::Dense { index, query } => index.query(query, k)?,
            Searcher::Lexical(index) => index.query(&self.query.text, k)?,
        })
    }

    /// Retrieve `k` candidates and produce the final list.
    pub fn finish(
        &self,
        bug: &PreparedBug,
        config: &PipelineConfig,
        providers: &Providers,
        k: usize,
    ) -> Result<BugOutcome, EvalError> {
        let bug_id = &bug.case.bug_id;
        let retrieval = self.search(k)?;
        let candidates: Vec<RerankCandidate> = retrieval
            .iter()
            .map(|r| {
                let m = bug.corpus.corpus.get(&r.method_id).expect("retrieved id comes from the corpus");
                RerankCandidate::from(m)
            })
            .collect();
        let ranking = if config.variant == Variant::NoRerank {
            retrieval_order(bug_id, &candidates, config.final_list_size)
        } else {
            let options = RerankOptions {
                parse_retries: config.rerank_parse_retries,
                final_list_size: config.final_list_size,
                model_id: config.chat_model.clone(),
                retry: providers.retry,
                ..RerankOptions::default()
            };
            rerank(bug_id, &self.query, &candidates, providers.chat, &options)?
        };
        let score = score_ranking(&ranking, &bug.corpus.corpus, &bug.case.ground_truth)?;
        Ok(BugOutcome {
            bug_id: bug_id.clone(),
            variant: config.variant,
            retrieval_k: k,
            query_text: self.query.text.clone(),
            retriever: self.retriever(),
            usage: self.query.usage + ranking.usage,
            retrieval,
            ranking,
            score,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugOutcome {
    pub bug_id: String,
    pub variant: Variant,
    pub retrieval_k: usize,
    pub query_text: String,
    pub retriever: Retriever,
    pub retrieval: Vec<RetrievalResult>,
    pub ranking: FinalRanking,
    /// Query generation plus rerank calls.
    pub usage: Usage,
    pub score: BugScore,
}

/// Run one bug through the configured variant.
pub fn localize(bug: &PreparedBug, config: &PipelineConfig, providers: &Providers) -> Result<BugOutcome, EvalError> {
    config.validate()?;
    Stages::build(bug, config, providers)?.finish(bug, config, providers, config.retrieval_k)
}
