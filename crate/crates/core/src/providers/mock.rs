//! Deterministic offline providers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{
    estimate_tokens, ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, EmbeddingProviderInfo,
    ProviderError, Result,
};
use crate::{query, rerank};

/// Which pipeline stage produced a prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Extract,
    Rerank,
    #[default]
    Any,
}

impl PromptKind {
    pub fn of(prompt: &str) -> Self {
        if prompt.starts_with(query::EXTRACTION_OPENING) {
            PromptKind::Extract
        } else if prompt.contains(rerank::RERANK_OPENING) {
            PromptKind::Rerank
        } else {
            PromptKind::Any
        }
    }

    fn admits(self, other: PromptKind) -> bool {
        self == PromptKind::Any || self == other
    }
}

/// Substring-triggered scripted reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default)]
    pub kind: PromptKind,
    pub contains: String,
    pub response: String,
}

/// Chat mock. Lookup order: exact prompt table, first matching rule, then
/// the fixed fallback reply if set, else a heuristic reply: extraction
/// prompts get a description built from the test names, rerank prompts get
/// the candidates back in prompt order.
///
/// Token usage is the character estimate of prompt and reply.
pub struct MockChat {
    model_id: String,
    table: HashMap<String, String>,
    rules: Vec<MockRule>,
    fallback: Option<String>,
    context_limit: Option<usize>,
    calls: AtomicUsize,
}

impl Default for MockChat {
    fn default() -> Self {
        Self::new()
    }
}

impl MockChat {
    pub const MODEL_ID: &'static str = "mock-chat";

    pub fn new() -> Self {
        Self {
            model_id: Self::MODEL_ID.to_string(),
            table: HashMap::new(),
            rules: Vec::new(),
            fallback: None,
            context_limit: None,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_reply(mut self, prompt: impl Into<String>, reply: impl Into<String>) -> Self {
        self.table.insert(prompt.into(), reply.into());
        self
    }

    pub fn with_rules(mut self, rules: impl IntoIterator<Item = MockRule>) -> Self {
        self.rules.extend(rules);
        self
    }

    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }

    pub fn with_context_limit(mut self, tokens: usize) -> Self {
        self.context_limit = Some(tokens);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn reply_for(&self, prompt: &str) -> String {
        if let Some(r) = self.table.get(prompt) {
            return r.clone();
        }
        let kind = PromptKind::of(prompt);
        if let Some(rule) = self
            .rules
            .iter()
            .find(|r| r.kind.admits(kind) && prompt.contains(&r.contains))
        {
            return rule.response.clone();
        }
        if let Some(f) = &self.fallback {
            return f.clone();
        }
        match kind {
            PromptKind::Extract => heuristic_description(prompt),
            PromptKind::Rerank => heuristic_ranking(prompt),
            PromptKind::Any => "ok".to_string(),
        }
    }
}

impl ChatProvider for MockChat {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let input_tokens = estimate_tokens(&request.prompt);
        if let Some(limit) = self.context_limit {
            if input_tokens > limit {
                return Err(ProviderError::ContextOverflow(format!(
                    "{input_tokens} tokens, limit {limit}"
                )));
            }
        }
        let text = self.reply_for(&request.prompt);
        Ok(ChatResponse {
            input_tokens: input_tokens as u64,
            output_tokens: estimate_tokens(&text) as u64,
            text,
        })
    }
}

fn heuristic_description(prompt: &str) -> String {
    let words: Vec<String> = prompt
        .lines()
        .filter_map(|l| l.strip_prefix("Test name: "))
        .flat_map(|name| {
            let simple = name.rsplit(['.', ':', '#']).next().unwrap_or(name);
            let simple = simple.strip_prefix("test").unwrap_or(simple);
            crate::retrieval::bm25_tokenize(simple)
        })
        .collect();
    if words.is_empty() {
        "unspecified functionality fails".to_string()
    } else {
        format!("the functionality to {} fails", words.join(" "))
    }
}

fn heuristic_ranking(prompt: &str) -> String {
    let mut entries = Vec::new();
    let mut class: Option<&str> = None;
    for line in prompt.lines() {
        if let Some(c) = line.strip_prefix("class: ") {
            class = Some(c.trim_end());
        } else if let Some(m) = line.strip_prefix("method: ") {
            if let Some(c) = class.take() {
                entries.push(serde_json::json!({
                    "class": c,
                    "method": m.trim_end(),
                    "rank": entries.len() + 1,
                }));
            }
        }
    }
    serde_json::Value::Array(entries).to_string()
}

/// Embedding mock: L2-normalized counts of hashed, lowercased character
/// trigrams. Texts shorter than three characters hash as one gram.
pub struct MockEmbedder {
    info: EmbeddingProviderInfo,
    seed: u64,
    calls: AtomicUsize,
}

impl MockEmbedder {
    pub const DEFAULT_DIM: usize = 64;
    pub const DEFAULT_MAX_TOKENS: usize = 128;

    pub fn new(seed: u64) -> Self {
        Self::with_shape(seed, Self::DEFAULT_DIM, Self::DEFAULT_MAX_TOKENS)
    }

    pub fn with_shape(seed: u64, dim: usize, max_tokens: usize) -> Self {
        Self {
            info: EmbeddingProviderInfo {
                model_id: format!("mock-trigram-{dim}"),
                dim,
                max_tokens,
            },
            seed,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of `embed_batch` calls served.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        trigram_vector(text, self.info.dim, self.seed)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub(crate) fn trigram_vector(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut v = vec![0.0; dim];
    if chars.is_empty() || dim == 0 {
        return v;
    }
    let mut buf = String::new();
    let grams: Box<dyn Iterator<Item = &[char]>> = if chars.len() < 3 {
        Box::new(std::iter::once(&chars[..]))
    } else {
        Box::new(chars.windows(3))
    };
    for gram in grams {
        buf.clear();
        buf.extend(gram);
        v[(fnv1a(seed, buf.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

impl EmbeddingProvider for MockEmbedder {
    fn info(&self) -> Result<EmbeddingProviderInfo> {
        Ok(self.info.clone())
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}
