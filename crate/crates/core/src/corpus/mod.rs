//! Retrieval corpus construction.
//!
//! A bug's corpus is the set of source methods executed by its failing
//! tests. Coverage reports name the methods (class, name, parameter types);
//! the Java extractor locates their declarations in the source tree so the
//! method text can be embedded and ranked.

mod build;
mod coverage;
mod java;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::{build_corpus, CorpusBuild, UnresolvedKey};
pub use coverage::{parse_coverage, parse_jvm_descriptor, CoverageFormat};
pub use java::{extract_methods, Language};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed coverage report: {0}")]
    MalformedCoverage(String),
    #[error("coverage report lists no covered methods")]
    EmptyCoverage,
    #[error("unsupported language: {0}")]
    UnsupportedLanguage(String),
    #[error("no declarations recoverable from {0}")]
    ParseFailure(String),
    #[error("cannot read source root {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Identity of a method as coverage tools report it.
///
/// `param_types` is `None` when the report does not carry a signature; such
/// keys match every overload with the same name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MethodKey {
    pub class_fqn: String,
    pub method_name: String,
    pub param_types: Option<Vec<String>>,
}

impl MethodKey {
    pub fn new(class_fqn: impl Into<String>, method_name: impl Into<String>) -> Self {
        Self {
            class_fqn: class_fqn.into(),
            method_name: method_name.into(),
            param_types: None,
        }
    }

    pub fn with_params<S: Into<String>>(mut self, params: impl IntoIterator<Item = S>) -> Self {
        self.param_types = Some(params.into_iter().map(Into::into).collect());
        self
    }

    /// Whether `record` is one of the methods this key denotes.
    pub fn matches(&self, record: &MethodRecord) -> bool {
        if self.class_fqn != record.class_fqn || self.method_name != record.method_name {
            return false;
        }
        match &self.param_types {
            Some(params) => params == &record.param_types,
            None => true,
        }
    }
}

impl fmt::Display for MethodKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.class_fqn, self.method_name)?;
        if let Some(params) = &self.param_types {
            write!(f, "({})", params.join(","))?;
        }
        Ok(())
    }
}

/// Inclusive 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineSpan {
    pub start: usize,
    pub end: usize,
}

/// One extracted source method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method_id: String,
    pub class_fqn: String,
    /// Simple name; constructors are `<init>`.
    pub method_name: String,
    pub param_types: Vec<String>,
    pub source_text: String,
    pub file_path: String,
    pub line_span: LineSpan,
}

impl MethodRecord {
    pub fn key(&self) -> MethodKey {
        MethodKey::new(&self.class_fqn, &self.method_name).with_params(self.param_types.clone())
    }

    /// Class name without its package, as an LLM would usually write it.
    pub fn simple_class_name(&self) -> &str {
        simple_name(&self.class_fqn)
    }
}

pub(crate) fn method_id_for(class_fqn: &str, method_name: &str, params: &[String]) -> String {
    format!("{class_fqn}#{method_name}({})", params.join(","))
}

/// Last segment of a dotted / `$`-nested class name.
pub fn simple_name(fqn: &str) -> &str {
    fqn.rsplit(['.', '$']).next().unwrap_or(fqn)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub bug_id: String,
    pub covered_method_keys: BTreeSet<MethodKey>,
    /// Empty for formats that do not record test names (Cobertura); callers
    /// fill it from the failing-test input.
    pub failing_test_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodCorpus {
    pub bug_id: String,
    pub methods: Vec<MethodRecord>,
}

impl MethodCorpus {
    pub fn len(&self) -> usize {
        self.methods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.methods.is_empty()
    }

    pub fn get(&self, method_id: &str) -> Option<&MethodRecord> {
        self.methods.iter().find(|m| m.method_id == method_id)
    }
}

/// Reduce a Java type as written in source or in a coverage report to the
/// comparable form used in method keys: generic arguments and package
/// qualifiers are dropped, varargs become arrays.
///
/// `java.util.List<String>` becomes `List`, `Map.Entry<K,V>[]` becomes
/// `Entry[]`, `String...` becomes `String[]`.
pub fn normalize_type_name(raw: &str) -> String {
    let mut base = String::with_capacity(raw.len());
    let mut depth = 0usize;
    for c in raw.chars() {
        match c {
            '<' => depth += 1,
            '>' => depth = depth.saturating_sub(1),
            c if depth == 0 && !c.is_whitespace() => base.push(c),
            _ => {}
        }
    }
    let mut dims = 0;
    let mut s = base.as_str();
    loop {
        if let Some(rest) = s.strip_suffix("...") {
            dims += 1;
            s = rest;
        } else if let Some(rest) = s.strip_suffix("[]") {
            dims += 1;
            s = rest;
        } else {
            break;
        }
    }
    let mut out = simple_name(s).to_string();
    for _ in 0..dims {
        out.push_str("[]");
    }
    out
}

/// Map a class name reported by a coverage tool onto the class that owns the
/// method in source. Anonymous and local classes (`Outer$1`, `Outer$1Local`)
/// fold into their enclosing named class.
pub fn normalize_class_name(raw: &str) -> String {
    let dotted = raw.replace('/', ".");
    let mut out = String::with_capacity(dotted.len());
    for (i, segment) in dotted.split('$').enumerate() {
        if i > 0 {
            if segment.chars().next().is_none_or(|c| c.is_ascii_digit()) {
                break;
            }
            out.push('$');
        }
        out.push_str(segment);
    }
    out
}
