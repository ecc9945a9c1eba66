//! LLM re-ranking of retrieved candidates and reconciliation of the model's
//! JSON answer into a validated final list.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{simple_name, MethodRecord};
use crate::providers::{chat, ChatProvider, ChatRequest, ProviderError, RetryPolicy, Usage};
use crate::query::FunctionalityQuery;

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("no candidates to rerank")]
    EmptyCandidates,
    #[error("final list size must be at least 1")]
    ZeroFinalSize,
    #[error("no JSON array found in response")]
    NoJsonFound,
    #[error("response does not follow the ranking schema: {0}")]
    SchemaViolation(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankCandidate {
    pub method_id: String,
    pub class_fqn: String,
    pub method_name: String,
    pub source_text: String,
}

impl From<&MethodRecord> for RerankCandidate {
    fn from(m: &MethodRecord) -> Self {
        Self {
            method_id: m.method_id.clone(),
            class_fqn: m.class_fqn.clone(),
            method_name: m.method_name.clone(),
            source_text: m.source_text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRankEntry {
    pub class: String,
    pub method: String,
    pub rank: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "llm")]
    Llm,
    #[serde(rename = "fallback-retrieval")]
    FallbackRetrieval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedMethod {
    pub method_id: String,
    pub class_fqn: String,
    pub method_name: String,
    pub provenance: Provenance,
    /// The LLM named this method without parameter types and more than one
    /// candidate overload carried that name.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub overload_ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalRanking {
    pub bug_id: String,
    pub entries: Vec<RankedMethod>,
    pub usage: Usage,
    /// Chat replies that could not be parsed.
    #[serde(default)]
    pub parse_failures: u32,
}

impl FinalRanking {
    pub fn method_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.method_id.as_str()).collect()
    }
}

/// First sentence of the rerank template; also used to recognise it.
pub const RERANK_OPENING: &str = "You are given several suspicious methods retrieved via embedding-based search.";

const RERANK_HEADER: &str = "\
You are given several suspicious methods retrieved via embedding-based search.
Your task is to carefully read each code snippet and determine how likely each method causes the bug described earlier.
Then, **rank the methods** from most likely buggy (rank 1) to least likely buggy, output is in json form.

Use this JSON output schema:

method = {'class': str, 'method':str, 'rank': int}

return list[method]

";

/// The functionality query comes first as the bug description the template
/// refers back to; an empty query leaves just the template and the blocks.
pub fn build_rerank_prompt(query: &FunctionalityQuery, candidates: &[RerankCandidate]) -> Result<String, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }
    let blocks: Vec<String> = candidates
        .iter()
        .map(|c| {
            format!(
                "class: {}\n\nmethod: {}\n\ncode snippet: {}",
                c.class_fqn, c.method_name, c.source_text
            )
        })
        .collect();
    let preamble = if query.text.is_empty() {
        String::new()
    } else {
        format!("Bug description:\n{}\n\n", query.text)
    };
    Ok(format!("{preamble}{RERANK_HEADER}{}", blocks.join("\n\n")))
}

/// Parse the first JSON array in `text`. Prose and code fences around it
/// are ignored.
pub fn parse_rerank_response(text: &str) -> Result<Vec<LlmRankEntry>, RerankError> {
    let array = text
        .match_indices('[')
        .find_map(|(i, _)| {
            let mut values = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
            match values.next() {
                Some(Ok(Value::Array(a))) => Some(a),
                _ => None,
            }
        })
        .ok_or(RerankError::NoJsonFound)?;
    array.iter().enumerate().map(|(i, v)| entry_from(i, v)).collect()
}

fn entry_from(i: usize, v: &Value) -> Result<LlmRankEntry, RerankError> {
    let violation = |msg: &str| RerankError::SchemaViolation(format!("element {i}: {msg}"));
    let obj = v.as_object().ok_or_else(|| violation("not an object"))?;
    let field = |name: &str| -> Result<String, RerankError> {
        obj.get(name)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| violation(&format!("missing string '{name}'")))
    };
    let rank = obj
        .get("rank")
        .and_then(Value::as_u64)
        .filter(|&r| r >= 1)
        .ok_or_else(|| violation("'rank' must be an integer >= 1"))?;
    Ok(LlmRankEntry {
        class: field("class")?,
        method: field("method")?,
        rank,
    })
}

fn strip_params(method: &str) -> &str {
    method.split('(').next().unwrap_or(method).trim()
}

fn class_matches(named: &str, fqn: &str) -> bool {
    let named = named.trim().replace('$', ".");
    let fqn = fqn.replace('$', ".");
    named == fqn || fqn.ends_with(&format!(".{named}")) || named == simple_name(&fqn)
}

/// Turn LLM entries into a final list over `candidates`:
/// entries are matched by (class, method), or by method name alone when the
/// named class is not among the candidates; unmatched entries are dropped;
/// matched candidates are ordered by rank then retrieval position; the
/// remaining candidates follow in retrieval order; the result is truncated
/// to `final_list_size`.
pub fn reconcile(
    bug_id: &str,
    entries: &[LlmRankEntry],
    candidates: &[RerankCandidate],
    final_list_size: usize,
) -> FinalRanking {
    let mut best: Vec<Option<(u64, bool)>> = vec![None; candidates.len()];
    for e in entries {
        let method = strip_params(&e.method);
        let class_known = candidates.iter().any(|c| class_matches(&e.class, &c.class_fqn));
        let hits: Vec<usize> = candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.method_name == method && (!class_known || class_matches(&e.class, &c.class_fqn)))
            .map(|(i, _)| i)
            .collect();
        let ambiguous = hits.len() > 1;
        for i in hits {
            best[i] = Some(match best[i] {
                Some((r, a)) if r <= e.rank => (r, a),
                _ => (e.rank, ambiguous),
            });
        }
    }

    let mut ranked: Vec<(u64, usize, bool)> = best
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|(r, a)| (r, i, a)))
        .collect();
    ranked.sort_by_key(|&(r, i, _)| (r, i));

    let mut out: Vec<RankedMethod> = ranked
        .into_iter()
        .map(|(_, i, ambiguous)| ranked_method(&candidates[i], Provenance::Llm, ambiguous))
        .collect();
    out.extend(
        candidates
            .iter()
            .zip(&best)
            .filter(|(_, b)| b.is_none())
            .map(|(c, _)| ranked_method(c, Provenance::FallbackRetrieval, false)),
    );
    out.truncate(final_list_size);
    FinalRanking {
        bug_id: bug_id.to_string(),
        entries: out,
        usage: Usage::default(),
        parse_failures: 0,
    }
}

fn ranked_method(c: &RerankCandidate, provenance: Provenance, overload_ambiguous: bool) -> RankedMethod {
    RankedMethod {
        method_id: c.method_id.clone(),
        class_fqn: c.class_fqn.clone(),
        method_name: c.method_name.clone(),
        provenance,
        overload_ambiguous,
    }
}

/// Retrieval order truncated, all entries marked as fallback.
pub fn retrieval_order(bug_id: &str, candidates: &[RerankCandidate], final_list_size: usize) -> FinalRanking {
    reconcile(bug_id, &[], candidates, final_list_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOptions {
    /// Extra attempts after an unparseable reply.
    pub parse_retries: u32,
    pub final_list_size: usize,
    /// Empty means the provider's own model id.
    pub model_id: String,
    pub max_output_tokens: u32,
    pub retry: RetryPolicy,
}

impl Default for RerankOptions {
    fn default() -> Self {
        Self {
            parse_retries: 1,
            final_list_size: 10,
            model_id: String::new(),
            max_output_tokens: ChatRequest::DEFAULT_MAX_OUTPUT_TOKENS,
            retry: RetryPolicy::default(),
        }
    }
}

pub fn rerank(
    bug_id: &str,
    query: &FunctionalityQuery,
    candidates: &[RerankCandidate],
    chat_provider: &dyn ChatProvider,
    options: &RerankOptions,
) -> Result<FinalRanking, RerankError> {
    if options.final_list_size == 0 {
        return Err(RerankError::ZeroFinalSize);
    }
    let prompt = build_rerank_prompt(query, candidates)?;
    let model_id = if options.model_id.is_empty() {
        chat_provider.model_id().to_string()
    } else {
        options.model_id.clone()
    };
    let mut request = ChatRequest::new(model_id, prompt);
    request.max_output_tokens = options.max_output_tokens;

    let mut usage = Usage::default();
    let mut failures = 0;
    for _ in 0..=options.parse_retries {
        let response = chat(&request, chat_provider, &options.retry)?;
        usage += response.usage();
        match parse_rerank_response(&response.text) {
            Ok(entries) => {
                let mut ranking = reconcile(bug_id, &entries, candidates, options.final_list_size);
                ranking.usage = usage;
                ranking.parse_failures = failures;
                return Ok(ranking);
            }
            Err(e) => {
                warn!("{bug_id}: unusable rerank reply: {e}");
                failures += 1;
            }
        }
    }
    let mut ranking = retrieval_order(bug_id, candidates, options.final_list_size);
    ranking.usage = usage;
    ranking.parse_failures = failures;
    Ok(ranking)
}

#[derive(Serialize)]
struct RankingLine<'a> {
    bug_id: &'a str,
    rank: usize,
    class: &'a str,
    method: &'a str,
    method_id: &'a str,
    provenance: Provenance,
}

/// One JSON line per entry: `{bug_id, rank, class, method, method_id, provenance}`.
pub fn write_final_ranking<W: Write>(mut out: W, ranking: &FinalRanking) -> std::io::Result<()> {
    for (i, e) in ranking.entries.iter().enumerate() {
        serde_json::to_writer(
            &mut out,
            &RankingLine {
                bug_id: &ranking.bug_id,
                rank: i + 1,
                class: &e.class_fqn,
                method: &e.method_name,
                method_id: &e.method_id,
                provenance: e.provenance,
            },
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
