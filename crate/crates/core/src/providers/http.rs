//! Blocking HTTP clients for the embedding wire protocol and
//! chat-completion endpoints.

use std::fmt;
use std::sync::OnceLock;
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, EmbeddingProviderInfo, ProviderError, Result,
};

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

fn build_client(timeout: Duration) -> Result<Client> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ProviderError::Unavailable(format!("cannot build HTTP client: {e}")))
}

fn transport(e: reqwest::Error) -> ProviderError {
    ProviderError::Unavailable(e.to_string())
}

/// Map non-success statuses shared by both protocols.
fn check_status(resp: Response) -> Result<Response> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().unwrap_or_default();
    Err(match status {
        StatusCode::TOO_MANY_REQUESTS => ProviderError::RateLimited,
        StatusCode::PAYLOAD_TOO_LARGE => ProviderError::InvalidRequest(format!("payload too large: {body}")),
        s if s.is_server_error() => ProviderError::Unavailable(format!("{s}: {body}")),
        s if body.contains("context_length_exceeded") || body.contains("maximum context length") => {
            ProviderError::ContextOverflow(format!("{s}: {body}"))
        }
        s => ProviderError::BadResponse(format!("{s}: {body}")),
    })
}

/// Client for `GET /info` and `POST /embed`.
pub struct HttpEmbeddingClient {
    base_url: String,
    client: Client,
    info: OnceLock<EmbeddingProviderInfo>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl HttpEmbeddingClient {
    pub fn new(base_url: impl Into<String>) -> Result<Self> {
        Self::with_timeout(base_url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base_url: impl Into<String>, timeout: Duration) -> Result<Self> {
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client: build_client(timeout)?,
            info: OnceLock::new(),
        })
    }
}

impl EmbeddingProvider for HttpEmbeddingClient {
    /// Fetched once; the server's info is fixed for its lifetime.
    fn info(&self) -> Result<EmbeddingProviderInfo> {
        if let Some(info) = self.info.get() {
            return Ok(info.clone());
        }
        let resp = self
            .client
            .get(format!("{}/info", self.base_url))
            .send()
            .map_err(transport)?;
        let info: EmbeddingProviderInfo = check_status(resp)?
            .json()
            .map_err(|e| ProviderError::BadResponse(format!("/info: {e}")))?;
        if info.dim == 0 || info.max_tokens == 0 {
            return Err(ProviderError::BadResponse(format!("/info returned {info:?}")));
        }
        Ok(self.info.get_or_init(|| info).clone())
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let resp = self
            .client
            .post(format!("{}/embed", self.base_url))
            .json(&EmbedRequest { texts })
            .send()
            .map_err(transport)?;
        let body: EmbedResponse = check_status(resp)?
            .json()
            .map_err(|e| ProviderError::BadResponse(format!("/embed: {e}")))?;
        Ok(body.vectors)
    }
}

/// OpenAI-style `chat/completions` client.
///
/// The API key is read from the named environment variable once, at
/// construction, and is never printed.
pub struct HttpChatClient {
    endpoint: String,
    model_id: String,
    api_key: Option<String>,
    client: Client,
}

impl fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatClient")
            .field("endpoint", &self.endpoint)
            .field("model_id", &self.model_id)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<CompletionUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct CompletionUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>, api_key_env: Option<&str>) -> Result<Self> {
        let api_key = match api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::InvalidRequest(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            api_key,
            client: build_client(DEFAULT_TIMEOUT)?,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Result<Self> {
        self.client = build_client(timeout)?;
        Ok(self)
    }
}

impl ChatProvider for HttpChatClient {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let body = json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = check_status(req.send().map_err(transport)?)?;
        let parsed: CompletionBody = resp
            .json()
            .map_err(|e| ProviderError::BadResponse(format!("chat completion: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::BadResponse("completion has no message content".into()))?;
        let usage = parsed.usage.ok_or_else(|| ProviderError::BadResponse("completion has no usage".into()))?;
        Ok(ChatResponse {
            text,
            input_tokens: usage.prompt_tokens,
            output_tokens: usage.completion_tokens,
        })
    }
}
