use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{extract_methods, CorpusError, CoverageReport, Language, MethodCorpus, MethodKey, MethodRecord};

/// A covered key with no matching declaration under the source roots
/// (typically library code).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedKey {
    pub key: MethodKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusBuild {
    pub corpus: MethodCorpus,
    pub unresolved: Vec<UnresolvedKey>,
    /// Covered keys that matched at least one method.
    pub resolved_keys: usize,
}

/// Locate the source of every covered method.
///
/// Keys without parameter types, or whose types do not match exactly (erased
/// generics), match every overload of the same arity, or every overload
/// when no arity matches. A method matched by several keys enters once.
pub fn build_corpus(coverage: &CoverageReport, source_roots: &[PathBuf]) -> Result<CorpusBuild, CorpusError> {
    for root in source_roots {
        if !root.is_dir() {
            return Err(CorpusError::Io {
                path: root.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            });
        }
    }

    let mut index = SourceIndex::new(source_roots);
    let mut selected: BTreeMap<String, MethodRecord> = BTreeMap::new();
    let mut unresolved = Vec::new();
    let mut resolved_keys = 0;

    for key in &coverage.covered_method_keys {
        let candidates = index.methods_of(&key.class_fqn)?;
        let matches = resolve(key, candidates);
        if matches.is_empty() {
            let reason = if candidates.is_empty() {
                format!("class {} not found under source roots", key.class_fqn)
            } else {
                format!("no declaration of {} in {}", key.method_name, key.class_fqn)
            };
            debug!("unresolved {key}: {reason}");
            unresolved.push(UnresolvedKey { key: key.clone(), reason });
            continue;
        }
        resolved_keys += 1;
        for m in matches {
            selected.entry(m.method_id.clone()).or_insert_with(|| m.clone());
        }
    }

    let mut methods: Vec<MethodRecord> = selected.into_values().collect();
    methods.sort_by(|a, b| {
        (&a.class_fqn, &a.method_name, &a.param_types, a.line_span.start)
            .cmp(&(&b.class_fqn, &b.method_name, &b.param_types, b.line_span.start))
    });
    if !unresolved.is_empty() {
        warn!(
            "{}: {} of {} covered methods not found in source",
            coverage.bug_id,
            unresolved.len(),
            coverage.covered_method_keys.len()
        );
    }
    Ok(CorpusBuild {
        corpus: MethodCorpus {
            bug_id: coverage.bug_id.clone(),
            methods,
        },
        unresolved,
        resolved_keys,
    })
}

fn resolve<'a>(key: &MethodKey, candidates: &'a [MethodRecord]) -> Vec<&'a MethodRecord> {
    let named: Vec<&MethodRecord> = candidates
        .iter()
        .filter(|m| m.method_name == key.method_name)
        .collect();
    let Some(params) = &key.param_types else {
        return named;
    };
    let exact: Vec<_> = named.iter().copied().filter(|m| &m.param_types == params).collect();
    if !exact.is_empty() {
        return exact;
    }
    let same_arity: Vec<_> = named
        .iter()
        .copied()
        .filter(|m| m.param_types.len() == params.len())
        .collect();
    if !same_arity.is_empty() {
        return same_arity;
    }
    named
}

/// Lazily parsed view of the source roots, keyed by class FQN.
struct SourceIndex<'a> {
    roots: &'a [PathBuf],
    parsed_files: BTreeSet<PathBuf>,
    by_class: BTreeMap<String, Vec<MethodRecord>>,
    scanned_all: bool,
    empty: Vec<MethodRecord>,
}

impl<'a> SourceIndex<'a> {
    fn new(roots: &'a [PathBuf]) -> Self {
        Self {
            roots,
            parsed_files: BTreeSet::new(),
            by_class: BTreeMap::new(),
            scanned_all: false,
            empty: Vec::new(),
        }
    }

    fn methods_of(&mut self, class_fqn: &str) -> Result<&[MethodRecord], CorpusError> {
        if !self.by_class.contains_key(class_fqn) {
            // conventional location first: a.b.Outer$Inner lives in a/b/Outer.java
            let top = class_fqn.split('$').next().unwrap_or(class_fqn);
            let rel: PathBuf = format!("{}.java", top.replace('.', "/")).into();
            for root in self.roots {
                let path = root.join(&rel);
                if path.is_file() {
                    self.parse_file(root, &path)?;
                }
            }
            if !self.by_class.contains_key(class_fqn) && !self.scanned_all {
                self.scan_all()?;
            }
        }
        Ok(self.by_class.get(class_fqn).map_or(&self.empty[..], Vec::as_slice))
    }

    fn scan_all(&mut self) -> Result<(), CorpusError> {
        self.scanned_all = true;
        for root in self.roots {
            let mut files: Vec<PathBuf> = WalkDir::new(root)
                .into_iter()
                .filter_map(Result::ok)
                .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "java"))
                .map(|e| e.into_path())
                .collect();
            files.sort();
            for f in files {
                self.parse_file(root, &f)?;
            }
        }
        Ok(())
    }

    fn parse_file(&mut self, root: &Path, path: &Path) -> Result<(), CorpusError> {
        if !self.parsed_files.insert(path.to_path_buf()) {
            return Ok(());
        }
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let rel = path
            .strip_prefix(root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        match extract_methods(&text, Language::Java, &rel) {
            Ok(records) => {
                for r in records {
                    self.by_class.entry(r.class_fqn.clone()).or_default().push(r);
                }
            }
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
        Ok(())
    }
}
