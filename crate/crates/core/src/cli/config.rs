use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::PipelineConfig;

pub const DEFAULT_SEED: u64 = 7;

/// Run configuration, read from TOML. Every section and key is optional.
/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub providers: ProviderConfig,
    pub cache: CacheConfig,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    /// Use the deterministic offline providers instead of HTTP.
    pub mock: bool,
    /// JSON list of `{kind, contains, response}` scripted chat replies.
    pub mock_rules: Option<PathBuf>,
    pub embedding_endpoint: String,
    pub chat_endpoint: String,
    /// Name of the environment variable holding the chat API key.
    pub chat_api_key_env: Option<String>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            mock: false,
            mock_rules: None,
            embedding_endpoint: "http://127.0.0.1:8765".into(),
            chat_endpoint: "https://api.openai.com/v1/chat/completions".into(),
            chat_api_key_env: Some("OPENAI_API_KEY".into()),
            max_in_flight: 4,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub embeddings: Option<PathBuf>,
    pub chat: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub workers: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            workers: 4,
            out_dir: PathBuf::from("faultloc-out"),
            seed: DEFAULT_SEED,
        }
    }
}

pub const CONFIG_TEMPLATE: &str = r#"# faultloc run configuration. All keys are optional; shown values are the
# defaults. Relative paths resolve against this file's directory.

[pipeline]
retrieval_k = 40            # candidates passed from retrieval to rerank
final_list_size = 10        # length of the final ranking
variant = "full"            # full | no_query | bm25 | no_rerank | no_stack_trace
chat_model = "gpt-4.1-mini" # model id sent with chat requests ("" = provider's own)
embedding_model = ""        # if set, the embedding server must report this model id
price_input_per_mtok = 0.15 # USD per million input tokens
price_output_per_mtok = 0.6 # USD per million output tokens
max_stack_lines = 50        # stack trace lines kept per failing test
rerank_parse_retries = 1    # extra rerank calls after an unparseable reply
bm25_k1 = 1.2
bm25_b = 0.75

[providers]
mock = false                # deterministic offline providers (also --mock-providers)
# mock_rules = "mock_rules.json"
embedding_endpoint = "http://127.0.0.1:8765"
chat_endpoint = "https://api.openai.com/v1/chat/completions"
chat_api_key_env = "OPENAI_API_KEY"  # variable NAME; keys are never put in this file
max_in_flight = 4           # concurrent requests per provider
timeout_secs = 120

[cache]
# embeddings = "cache/embeddings.jsonl"
# chat = "cache/chat.jsonl"

[run]
workers = 4
out_dir = "faultloc-out"
seed = 7
"#;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            config.providers.mock_rules.as_mut(),
            config.cache.embeddings.as_mut(),
            config.cache.chat.as_mut(),
            Some(&mut config.run.out_dir),
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.run.workers == 0 {
            return Err(ConfigError::Invalid("run.workers must be at least 1".into()));
        }
        if self.providers.max_in_flight == 0 {
            return Err(ConfigError::Invalid("providers.max_in_flight must be at least 1".into()));
        }
        if let Some(var) = &self.providers.chat_api_key_env {
            if !is_env_var_name(var) {
                return Err(ConfigError::Invalid(
                    "providers.chat_api_key_env must name an environment variable (e.g. OPENAI_API_KEY), not hold a key"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

fn is_env_var_name(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_uppercase() || c == '_')
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parses_to_defaults() {
        let parsed: RunConfig = toml::from_str(CONFIG_TEMPLATE).unwrap();
        assert_eq!(parsed, RunConfig::default());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[cache]\nchat = \"c/chat.jsonl\"\n[run]\nout_dir = \"/abs\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.cache.chat, Some(dir.path().join("c/chat.jsonl")));
        assert_eq!(c.run.out_dir, PathBuf::from("/abs"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[pipeline]\nretrieval_kk = 3\n").is_err());
    }

    #[test]
    fn inline_key_rejected() {
        let mut c = RunConfig::default();
        c.providers.chat_api_key_env = Some("sk-abc123".into());
        assert!(c.validate().is_err());
        c.providers.chat_api_key_env = Some("MY_KEY_2".into());
        assert!(c.validate().is_ok());
    }
}
