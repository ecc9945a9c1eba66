//! Failing-functionality query generation.
//!
//! Failing tests (name, code, stack trace) are deduplicated into a
//! [`FailureBundle`], rendered into the extraction prompt, and the LLM's
//! description of what broke becomes the retrieval query.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{chat, ChatProvider, ChatRequest, ProviderError, RetryPolicy, Usage};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("no failing tests supplied")]
    EmptyBundle,
    #[error("invalid failing test: {0}")]
    InvalidTest(String),
    #[error("LLM returned an empty functionality description")]
    EmptyResponse,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailingTest {
    #[serde(rename = "name")]
    pub test_fqn: String,
    #[serde(rename = "code", default)]
    pub test_code: String,
    #[serde(default)]
    pub stack_trace: String,
}

impl FailingTest {
    pub fn new(test_fqn: impl Into<String>, test_code: impl Into<String>, stack_trace: impl Into<String>) -> Self {
        Self {
            test_fqn: test_fqn.into(),
            test_code: test_code.into(),
            stack_trace: stack_trace.into(),
        }
    }

    fn validate(&self) -> Result<(), QueryError> {
        if self.test_fqn.trim().is_empty() {
            return Err(QueryError::InvalidTest("empty test name".into()));
        }
        if self.test_code.is_empty() && self.stack_trace.is_empty() {
            return Err(QueryError::InvalidTest(format!(
                "{} has neither code nor stack trace",
                self.test_fqn
            )));
        }
        Ok(())
    }
}

/// Failing-test input file: `{"bug_id": .., "tests": [{"name", "code", "stack_trace"}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailingTestsFile {
    pub bug_id: String,
    pub tests: Vec<FailingTest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureBundle {
    pub bug_id: String,
    pub tests: Vec<FailingTest>,
    /// Names of tests dropped because another kept test has identical code.
    pub dedup_note: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalityQuery {
    pub text: String,
    pub model_id: String,
    pub usage: Usage,
}

/// Collapse tests with byte-identical code (inherited test methods run under
/// several subclasses) to the lexicographically smallest name. Groups keep
/// the position of their first occurrence. Tests with no code never
/// collapse.
pub fn assemble_bundle(bug_id: &str, tests: &[FailingTest]) -> Result<FailureBundle, QueryError> {
    if tests.is_empty() {
        return Err(QueryError::EmptyBundle);
    }
    for t in tests {
        t.validate()?;
    }

    let mut kept: Vec<FailingTest> = Vec::new();
    let mut by_code: HashMap<&str, usize> = HashMap::new();
    let mut dedup_note = Vec::new();
    for t in tests {
        if t.test_code.is_empty() {
            kept.push(t.clone());
            continue;
        }
        match by_code.get(t.test_code.as_str()) {
            None => {
                by_code.insert(&t.test_code, kept.len());
                kept.push(t.clone());
            }
            Some(&slot) => {
                if t.test_fqn < kept[slot].test_fqn {
                    let replaced = std::mem::replace(&mut kept[slot], t.clone());
                    dedup_note.push(replaced.test_fqn);
                } else {
                    dedup_note.push(t.test_fqn.clone());
                }
            }
        }
    }
    Ok(FailureBundle {
        bug_id: bug_id.to_string(),
        tests: kept,
        dedup_note,
    })
}

/// First sentence of the extraction prompt; also used to recognise it.
pub const EXTRACTION_OPENING: &str = "You are a code assistant helping to identify faulty program behavior.";

const EXTRACTION_HEADER: &str = "\
You are a code assistant helping to identify faulty program behavior. One or more unit tests have failed due to the same underlying functionality issue.

Given the following test failure information (including multiple test codes, and stack traces), extract **only** the underlying functional logic that failed. Your output should be a clean, concise description of the shared functionality that failed to be implemented correctly.

Requirements:

- Focus on what functionality failed, not how the tests failed.

- Include any relevant objects, inputs, and expected behavior if available.

- The description should be precise and suitable for use as a semantic query to retrieve code (in natural language).

- Avoid unrelated details.

";

/// Render the extraction prompt, one test block per bundle entry in order.
/// Stack traces are inserted as given; see [`truncate_stack_trace`].
pub fn build_extraction_prompt(bundle: &FailureBundle, include_stack_trace: bool) -> String {
    let blocks: Vec<String> = bundle
        .tests
        .iter()
        .map(|t| {
            let mut block = format!("Test name: {}\nTest code: {}", t.test_fqn, t.test_code);
            if include_stack_trace {
                block.push_str("\nStack trace: ");
                block.push_str(&t.stack_trace);
            }
            block
        })
        .collect();
    format!("{EXTRACTION_HEADER}{}", blocks.join("\n\n"))
}

/// Keep the first `max_lines` lines; the failure frames sit at the top.
pub fn truncate_stack_trace(trace: &str, max_lines: usize) -> String {
    trace.lines().take(max_lines).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionOptions {
    pub include_stack_trace: bool,
    pub max_stack_lines: usize,
    pub model_id: String,
    pub max_output_tokens: u32,
    pub retry: RetryPolicy,
}

impl Default for ExtractionOptions {
    fn default() -> Self {
        Self {
            include_stack_trace: true,
            max_stack_lines: 50,
            model_id: String::new(),
            max_output_tokens: ChatRequest::DEFAULT_MAX_OUTPUT_TOKENS,
            retry: RetryPolicy::default(),
        }
    }
}

/// Ask the LLM what functionality failed. The reply is used verbatim.
pub fn extract_functionality(
    bundle: &FailureBundle,
    chat_provider: &dyn ChatProvider,
    options: &ExtractionOptions,
) -> Result<FunctionalityQuery, QueryError> {
    if bundle.tests.is_empty() {
        return Err(QueryError::EmptyBundle);
    }
    let truncated = FailureBundle {
        tests: bundle
            .tests
            .iter()
            .map(|t| FailingTest {
                stack_trace: truncate_stack_trace(&t.stack_trace, options.max_stack_lines),
                ..t.clone()
            })
            .collect(),
        ..bundle.clone()
    };
    let prompt = build_extraction_prompt(&truncated, options.include_stack_trace);
    let model_id = if options.model_id.is_empty() {
        chat_provider.model_id().to_string()
    } else {
        options.model_id.clone()
    };
    let mut request = ChatRequest::new(&model_id, prompt);
    request.max_output_tokens = options.max_output_tokens;
    let response = chat(&request, chat_provider, &options.retry)?;
    if response.text.trim().is_empty() {
        return Err(QueryError::EmptyResponse);
    }
    Ok(FunctionalityQuery {
        usage: response.usage(),
        text: response.text,
        model_id,
    })
}

/// Retrieval text for the variant that skips query generation: the raw
/// test names, code and (optionally truncated) stack traces.
pub fn raw_failure_text(bundle: &FailureBundle, include_stack_trace: bool, max_stack_lines: usize) -> String {
    bundle
        .tests
        .iter()
        .map(|t| {
            let mut s = format!("{}\n{}", t.test_fqn, t.test_code);
            if include_stack_trace && !t.stack_trace.is_empty() {
                s.push('\n');
                s.push_str(&truncate_stack_trace(&t.stack_trace, max_stack_lines));
            }
            s
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}
