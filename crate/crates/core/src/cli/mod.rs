//! Command-line surface: single-bug localization, batch evaluation,
//! ablation and retrieval-depth sweeps.
//!
//! Exit status is 0 on success, 1 when the pipeline fails (for batch
//! commands: when no bug succeeds) and 2 for usage or configuration errors.
//! Diagnostics go to standard error.

mod config;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::eval::{
    ablate, evaluate, load_bugset, localize, prepare_bug, sensitivity_sweep, BugCase, EvalError, EvalSummary,
    Providers, RunOptions, RunReport, Variant,
};
use crate::providers::{
    CachedChat, CachedEmbedder, ChatProvider, EmbeddingProvider, HttpChatClient, HttpEmbeddingClient, Limited,
    MockChat, MockEmbedder, MockRule, ProviderError,
};
use crate::rerank::write_final_ranking;
use crate::retrieval::write_retrieval_dump;

pub use config::{CacheConfig, ConfigError, ProviderConfig, RunConfig, RunSection, CONFIG_TEMPLATE, DEFAULT_SEED};

#[derive(Debug, Parser)]
#[command(name = "faultloc", version, about = "LLM-assisted method-level fault localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Localize one bug and print its final ranking.
    Localize {
        /// Bug manifest (JSON).
        bug: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a bug set and write a run manifest and summary.
    Evaluate {
        /// Directory of bug manifests.
        bugset: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a bug set under each ablation variant.
    Ablate {
        bugset: PathBuf,
        /// Comma-separated subset of variants; all five by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a bug set at several retrieval depths.
    Sweep {
        bugset: PathBuf,
        #[arg(long = "k-values", value_delimiter = ',', default_values_t = vec![20, 40, 60])]
        k_values: Vec<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print a documented configuration file with default values.
    ConfigTemplate,
}

/// Flags shared by the pipeline commands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Retrieval depth.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "final-size")]
    pub final_size: Option<usize>,
    /// Seed for the mock providers.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
    #[arg(long = "mock-providers")]
    pub mock_providers: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("provider setup failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Eval(EvalError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

fn file_error(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Config file (or defaults) with command-line overrides applied.
pub fn effective_config(common: &CommonArgs) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = common.variant {
        cfg.pipeline.variant = v;
    }
    if let Some(k) = common.k {
        cfg.pipeline.retrieval_k = k;
    }
    if let Some(n) = common.final_size {
        cfg.pipeline.final_list_size = n;
    }
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.run.workers = w;
    }
    if let Some(d) = &common.out_dir {
        cfg.run.out_dir = d.clone();
    }
    if common.mock_providers {
        cfg.providers.mock = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

type ChatStack = CachedChat<Limited<Box<dyn ChatProvider>>>;
type EmbedStack = CachedEmbedder<Limited<Box<dyn EmbeddingProvider>>>;

/// Providers as configured: mock or HTTP, each behind an in-flight limit
/// and an optional persistent cache.
pub struct ProviderStack {
    pub chat: ChatStack,
    pub embedder: EmbedStack,
}

impl ProviderStack {
    pub fn build(cfg: &RunConfig) -> Result<Self, CliError> {
        let p = &cfg.providers;
        let (chat, embedder, label): (Box<dyn ChatProvider>, Box<dyn EmbeddingProvider>, String) = if p.mock {
            let mut chat = MockChat::new();
            if let Some(path) = &p.mock_rules {
                let raw = fs::read(path).map_err(file_error(path))?;
                let rules: Vec<MockRule> = serde_json::from_slice(&raw).map_err(|e| CliError::File {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                chat = chat.with_rules(rules);
            }
            (
                Box::new(chat),
                Box::new(MockEmbedder::new(cfg.run.seed)),
                format!("mock:{}", cfg.run.seed),
            )
        } else {
            let timeout = Duration::from_secs(p.timeout_secs);
            let chat = HttpChatClient::new(&p.chat_endpoint, &cfg.pipeline.chat_model, p.chat_api_key_env.as_deref())?
                .with_timeout(timeout)?;
            let embed = HttpEmbeddingClient::with_timeout(&p.embedding_endpoint, timeout)?;
            (Box::new(chat), Box::new(embed), p.embedding_endpoint.clone())
        };
        Ok(Self {
            chat: CachedChat::open(Limited::new(chat, p.max_in_flight), cfg.cache.chat.as_deref())?,
            embedder: CachedEmbedder::open(
                Limited::new(embedder, p.max_in_flight),
                cfg.cache.embeddings.as_deref(),
                label,
            )?,
        })
    }

    pub fn providers(&self) -> Providers<'_> {
        Providers::new(&self.chat, &self.embedder)
    }

    fn report_calls(&self) {
        eprintln!(
            "provider calls: chat {}, embedding texts {}",
            self.chat.misses(),
            self.embedder.misses()
        );
    }
}

/// Parse `args` and run; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::ConfigTemplate => {
            print!("{CONFIG_TEMPLATE}");
            Ok(0)
        }
        Command::Localize { bug, common } => cmd_localize(&bug, &common),
        Command::Evaluate { bugset, common } => cmd_evaluate(&bugset, &common),
        Command::Ablate {
            bugset,
            variants,
            common,
        } => cmd_ablate(&bugset, &variants, &common),
        Command::Sweep {
            bugset,
            k_values,
            common,
        } => cmd_sweep(&bugset, &k_values, &common),
    }
}

fn run_options(cfg: &RunConfig, out_dir: PathBuf) -> RunOptions {
    RunOptions {
        workers: cfg.run.workers,
        out_dir: Some(out_dir),
        config_echo: Some(serde_json::to_value(cfg).expect("config serializes")),
    }
}

pub fn cmd_localize(bug_path: &Path, common: &CommonArgs) -> Result<i32, CliError> {
    let cfg = effective_config(common)?;
    let case = BugCase::load(bug_path)?;
    let stack = ProviderStack::build(&cfg)?;
    let bug = prepare_bug(&case)?;
    let outcome = localize(&bug, &cfg.pipeline, &stack.providers())?;

    let dir = &cfg.run.out_dir;
    fs::create_dir_all(dir).map_err(file_error(dir))?;
    let query = dir.join("query.txt");
    fs::write(&query, &outcome.query_text).map_err(file_error(&query))?;
    let retrieval = dir.join("retrieval.jsonl");
    let f = File::create(&retrieval).map_err(file_error(&retrieval))?;
    write_retrieval_dump(BufWriter::new(f), &outcome.bug_id, outcome.retriever, &outcome.retrieval)
        .map_err(file_error(&retrieval))?;
    let ranking = dir.join("ranking.jsonl");
    let f = File::create(&ranking).map_err(file_error(&ranking))?;
    write_final_ranking(BufWriter::new(f), &outcome.ranking).map_err(file_error(&ranking))?;

    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:>4}  {:<18}  method", "rank", "provenance");
    for (i, e) in outcome.ranking.entries.iter().enumerate() {
        let provenance = serde_json::to_value(e.provenance).expect("serializes");
        let _ = writeln!(out, "{:>4}  {:<18}  {}", i + 1, provenance.as_str().unwrap_or(""), e.method_id);
    }
    eprintln!("ranking written to {}", ranking.display());
    stack.report_calls();
    Ok(0)
}

fn batch_status(reports: &[RunReport]) -> i32 {
    if reports.iter().all(|r| r.outcomes.is_empty()) {
        1
    } else {
        0
    }
}

fn table_header() -> String {
    format!(
        "{:<16} {:>5} {:>5} {:>5} {:>5} {:>8} {:>8} {:>10}",
        "run", "bugs", "top1", "top3", "top5", "MAP", "MRR", "cost_usd"
    )
}

fn table_row(label: &str, s: &EvalSummary) -> String {
    format!(
        "{:<16} {:>5} {:>5} {:>5} {:>5} {:>8.4} {:>8.4} {:>10.6}",
        label,
        s.n_bugs,
        s.top(1),
        s.top(3),
        s.top(5),
        s.map_score,
        s.mrr,
        s.cost_usd
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    fs::write(path, text).map_err(file_error(path))
}

fn report_failures(reports: &[RunReport]) {
    for r in reports {
        for b in r.bugs.iter().filter(|b| b.error.is_some()) {
            eprintln!(
                "{} k={} {}: failed: {}",
                r.variant,
                r.retrieval_k,
                b.bug_id,
                b.error.as_deref().unwrap_or("")
            );
        }
    }
}

pub fn cmd_evaluate(bugset: &Path, common: &CommonArgs) -> Result<i32, CliError> {
    let cfg = effective_config(common)?;
    let cases = load_bugset(bugset)?;
    let stack = ProviderStack::build(&cfg)?;
    let report = evaluate(&cases, &cfg.pipeline, &stack.providers(), &run_options(&cfg, cfg.run.out_dir.clone()))?;
    report_failures(std::slice::from_ref(&report));
    println!("{}", table_header());
    println!("{}", table_row(report.variant.as_str(), &report.summary));
    eprintln!("run written to {}", cfg.run.out_dir.display());
    stack.report_calls();
    Ok(batch_status(std::slice::from_ref(&report)))
}

pub fn cmd_ablate(bugset: &Path, variants: &[Variant], common: &CommonArgs) -> Result<i32, CliError> {
    let cfg = effective_config(common)?;
    let cases = load_bugset(bugset)?;
    let stack = ProviderStack::build(&cfg)?;
    let variants = if variants.is_empty() { &Variant::ALL[..] } else { variants };
    let out = cfg.run.out_dir.clone();
    let reports = ablate(&cases, &cfg.pipeline, variants, &stack.providers(), &run_options(&cfg, out.clone()))?;
    report_failures(&reports);

    println!("{}", table_header());
    for r in &reports {
        println!("{}", table_row(r.variant.as_str(), &r.summary));
    }
    let table: Vec<(Variant, &EvalSummary)> = reports.iter().map(|r| (r.variant, &r.summary)).collect();
    fs::create_dir_all(&out).map_err(file_error(&out))?;
    write_json(&out.join("ablation.json"), &table)?;
    stack.report_calls();
    Ok(batch_status(&reports))
}

pub fn cmd_sweep(bugset: &Path, k_values: &[usize], common: &CommonArgs) -> Result<i32, CliError> {
    let cfg = effective_config(common)?;
    let cases = load_bugset(bugset)?;
    let stack = ProviderStack::build(&cfg)?;
    let out = cfg.run.out_dir.clone();
    let reports = sensitivity_sweep(&cases, &cfg.pipeline, k_values, &stack.providers(), &run_options(&cfg, out.clone()))?;
    report_failures(&reports);

    println!("{}", table_header());
    for r in &reports {
        println!("{}", table_row(&format!("k={}", r.retrieval_k), &r.summary));
    }
    let top1: Vec<usize> = reports.iter().map(|r| r.summary.top(1)).collect();
    let (lo, hi) = (
        top1.iter().min().copied().unwrap_or(0),
        top1.iter().max().copied().unwrap_or(0),
    );
    println!("top-1 across k: min {lo}, max {hi}, spread {}", hi - lo);
    let table: Vec<(usize, &EvalSummary)> = reports.iter().map(|r| (r.retrieval_k, &r.summary)).collect();
    fs::create_dir_all(&out).map_err(file_error(&out))?;
    write_json(&out.join("sweep.json"), &table)?;
    stack.report_calls();
    Ok(batch_status(&reports))
}
