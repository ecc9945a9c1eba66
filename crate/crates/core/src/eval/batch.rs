use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{summarize, EvalSummary};
use super::pipeline::{prepare_bug, BugOutcome, Providers, Stages};
use super::{io_error, BugCase, EvalError, PipelineConfig, Variant};
use crate::providers::Usage;
use crate::rerank::write_final_ranking;
use crate::retrieval::write_retrieval_dump;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub workers: usize,
    /// Where per-bug artifacts, the manifest and the summary go.
    pub out_dir: Option<PathBuf>,
    /// Echoed into the manifest instead of the pipeline config when set.
    pub config_echo: Option<serde_json::Value>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 4,
            out_dir: None,
            config_echo: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugRecord {
    pub bug_id: String,
    pub status: BugStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_relevant_rank: Option<usize>,
    /// Artifact name to path relative to the run directory.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub retrieval_k: usize,
    pub summary: EvalSummary,
    pub bugs: Vec<BugRecord>,
    /// Successful bugs, sorted by bug id.
    pub outcomes: Vec<BugOutcome>,
}

impl RunReport {
    pub fn failed(&self) -> usize {
        self.bugs.iter().filter(|b| b.status == BugStatus::Failed).count()
    }
}

/// Bug cases under `dir`: every `*.json` file directly inside it and every
/// `bug.json` one level down. Sorted by bug id.
pub fn load_bugset(dir: &Path) -> Result<Vec<BugCase>, EvalError> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_error(dir))? {
        let path = entry.map_err(io_error(dir))?.path();
        if path.is_dir() {
            let nested = path.join("bug.json");
            if nested.is_file() {
                paths.push(nested);
            }
        } else if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    let mut cases = paths.iter().map(|p| BugCase::load(p)).collect::<Result<Vec<_>, _>>()?;
    if cases.is_empty() {
        return Err(EvalError::EmptyBugset(dir.display().to_string()));
    }
    cases.sort_by(|a, b| a.bug_id.cmp(&b.bug_id));
    Ok(cases)
}

/// Evaluate every bug with the configured variant and depth.
pub fn evaluate(
    cases: &[BugCase],
    config: &PipelineConfig,
    providers: &Providers,
    options: &RunOptions,
) -> Result<RunReport, EvalError> {
    let mut reports = run_depths(cases, config, providers, options, &[config.retrieval_k])?;
    Ok(reports.pop().expect("one depth requested"))
}

/// One run per variant, each in its own subdirectory of the output dir.
pub fn ablate(
    cases: &[BugCase],
    config: &PipelineConfig,
    variants: &[Variant],
    providers: &Providers,
    options: &RunOptions,
) -> Result<Vec<RunReport>, EvalError> {
    if variants.is_empty() {
        return Err(EvalError::InvalidConfig("no variants requested".into()));
    }
    variants
        .iter()
        .map(|&v| {
            let opts = RunOptions {
                out_dir: options.out_dir.as_ref().map(|d| d.join(v.as_str())),
                ..options.clone()
            };
            evaluate(cases, &config.with_variant(v), providers, &opts)
        })
        .collect()
}

/// Re-run retrieval and rerank at each depth in `k_values`. The query and
/// the method index are computed once per bug and shared by all depths.
pub fn sensitivity_sweep(
    cases: &[BugCase],
    config: &PipelineConfig,
    k_values: &[usize],
    providers: &Providers,
    options: &RunOptions,
) -> Result<Vec<RunReport>, EvalError> {
    if k_values.is_empty() {
        return Err(EvalError::InvalidConfig("no retrieval depths given".into()));
    }
    run_depths(cases, config, providers, options, k_values)
}

type BugResults = Vec<Result<BugOutcome, String>>;

fn run_depths(
    cases: &[BugCase],
    config: &PipelineConfig,
    providers: &Providers,
    options: &RunOptions,
    ks: &[usize],
) -> Result<Vec<RunReport>, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyBugset("<input>".into()));
    }
    let configs: Vec<PipelineConfig> = ks
        .iter()
        .map(|&k| PipelineConfig {
            retrieval_k: k,
            ..config.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let mut ids = BTreeSet::new();
    if let Some(dup) = cases.iter().find(|c| !ids.insert(c.bug_id.as_str())) {
        return Err(EvalError::InvalidConfig(format!("duplicate bug id {}", dup.bug_id)));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| EvalError::InvalidConfig(format!("worker pool: {e}")))?;
    let mut per_bug: Vec<(String, BugResults)> = pool.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let results = run_bug(case, config, &configs, providers);
                (case.bug_id.clone(), results)
            })
            .collect()
    });
    per_bug.sort_by(|a, b| a.0.cmp(&b.0));

    let mut reports = Vec::with_capacity(ks.len());
    for (i, c) in configs.iter().enumerate() {
        let dir = options.out_dir.as_ref().map(|d| {
            if ks.len() == 1 {
                d.clone()
            } else {
                d.join(format!("k{}", c.retrieval_k))
            }
        });
        let mut bugs = Vec::new();
        let mut outcomes = Vec::new();
        for (bug_id, results) in &per_bug {
            match &results[i] {
                Ok(o) => {
                    bugs.push(BugRecord {
                        bug_id: bug_id.clone(),
                        status: BugStatus::Ok,
                        error: None,
                        first_relevant_rank: o.score.first_relevant_rank,
                        artifacts: BTreeMap::new(),
                    });
                    outcomes.push(o.clone());
                }
                Err(e) => bugs.push(BugRecord {
                    bug_id: bug_id.clone(),
                    status: BugStatus::Failed,
                    error: Some(e.clone()),
                    first_relevant_rank: None,
                    artifacts: BTreeMap::new(),
                }),
            }
        }
        let scores: Vec<_> = outcomes.iter().map(|o| o.score.clone()).collect();
        let usage: Usage = outcomes.iter().map(|o| o.usage).sum();
        let summary = summarize(&scores, usage, c.price_input_per_mtok, c.price_output_per_mtok);
        let mut report = RunReport {
            variant: c.variant,
            retrieval_k: c.retrieval_k,
            summary,
            bugs,
            outcomes,
        };
        if let Some(dir) = dir {
            write_run(&dir, &mut report, c, options)?;
        }
        info!(
            "{} k={}: {} bugs, {} failed, top-1 {}",
            c.variant,
            c.retrieval_k,
            report.bugs.len(),
            report.failed(),
            report.summary.top(1)
        );
        reports.push(report);
    }
    Ok(reports)
}

/// All depths for one bug; a failure before retrieval fails every depth.
fn run_bug(case: &BugCase, config: &PipelineConfig, configs: &[PipelineConfig], providers: &Providers) -> BugResults {
    let stages = prepare_bug(case).and_then(|bug| Stages::build(&bug, config, providers).map(|s| (bug, s)));
    match stages {
        Ok((bug, stages)) => configs
            .iter()
            .map(|c| {
                stages.finish(&bug, c, providers, c.retrieval_k).map_err(|e| {
                    warn!("{}: {e}", case.bug_id);
                    e.to_string()
                })
            })
            .collect(),
        Err(e) => {
            warn!("{}: {e}", case.bug_id);
            vec![Err(e.to_string()); configs.len()]
        }
    }
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| EvalError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_error(path))
}

#[derive(Serialize)]
struct Manifest<'a> {
    variant: Variant,
    retrieval_k: usize,
    config: serde_json::Value,
    n_bugs: usize,
    n_failed: usize,
    summary: &'a str,
    bugs: &'a [BugRecord],
}

#[derive(Serialize)]
struct UsageArtifact {
    input_tokens: u64,
    output_tokens: u64,
    query_input_tokens: u64,
    query_output_tokens: u64,
    rerank_parse_failures: u32,
}

fn write_run(dir: &Path, report: &mut RunReport, config: &PipelineConfig, options: &RunOptions) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    for (record, outcome) in report
        .bugs
        .iter_mut()
        .filter(|b| b.status == BugStatus::Ok)
        .zip(&report.outcomes)
    {
        let rel = PathBuf::from("bugs").join(file_safe(&outcome.bug_id));
        let bug_dir = dir.join(&rel);
        fs::create_dir_all(&bug_dir).map_err(io_error(&bug_dir))?;

        let query = bug_dir.join("query.txt");
        fs::write(&query, &outcome.query_text).map_err(io_error(&query))?;

        let retrieval = bug_dir.join("retrieval.jsonl");
        let f = File::create(&retrieval).map_err(io_error(&retrieval))?;
        write_retrieval_dump(BufWriter::new(f), &outcome.bug_id, outcome.retriever, &outcome.retrieval)
            .map_err(io_error(&retrieval))?;

        let ranking = bug_dir.join("ranking.jsonl");
        let f = File::create(&ranking).map_err(io_error(&ranking))?;
        write_final_ranking(BufWriter::new(f), &outcome.ranking).map_err(io_error(&ranking))?;

        let query_usage = outcome.usage.input_tokens - outcome.ranking.usage.input_tokens;
        write_json(
            &bug_dir.join("usage.json"),
            &UsageArtifact {
                input_tokens: outcome.usage.input_tokens,
                output_tokens: outcome.usage.output_tokens,
                query_input_tokens: query_usage,
                query_output_tokens: outcome.usage.output_tokens - outcome.ranking.usage.output_tokens,
                rerank_parse_failures: outcome.ranking.parse_failures,
            },
        )?;

        for name in ["query.txt", "retrieval.jsonl", "ranking.jsonl", "usage.json"] {
            record
                .artifacts
                .insert(name.to_string(), rel.join(name).to_string_lossy().into_owned());
        }
    }

    write_json(&dir.join("summary.json"), &report.summary)?;
    let config_value = match &options.config_echo {
        Some(v) => v.clone(),
        None => serde_json::to_value(config).expect("config serializes"),
    };
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            variant: report.variant,
            retrieval_k: report.retrieval_k,
            config: config_value,
            n_bugs: report.bugs.len(),
            n_failed: report.failed(),
            summary: "summary.json",
            bugs: &report.bugs,
        },
    )
}
