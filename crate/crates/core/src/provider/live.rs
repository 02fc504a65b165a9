use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{ChatRequest, ChatResponse, EmbeddingRequest, EmbeddingResponse, Provider, ProviderError};
use crate::vectors::EmbeddingVector;

/// Connection settings for an OpenAI-compatible service.
#[derive(Clone)]
pub struct LiveConfig {
    /// Base URL without the trailing `/chat/completions`, e.g.
    /// `https://generativelanguage.googleapis.com/v1beta/openai`.
    pub base_url: String,
    pub api_key: String,
    pub timeout: Duration,
}

impl std::fmt::Debug for LiveConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &"<redacted>")
            .field("timeout", &self.timeout)
            .finish()
    }
}

pub struct LiveProvider {
    config: LiveConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbedReply {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<String, ProviderError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let mut response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(&body)
            .map_err(map_transport)?;
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response.body_mut().read_to_string().map_err(map_transport)?;
        classify_status(status, retry_after, text)
    }
}

fn map_transport(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        other => ProviderError::Transport(other.to_string()),
    }
}

fn classify_status(status: u16, retry_after: Option<Duration>, body: String) -> Result<String, ProviderError> {
    match status {
        200..=299 => Ok(body),
        401 | 403 => Err(ProviderError::Authentication(format!("HTTP {status}"))),
        429 => Err(ProviderError::RateLimited { retry_after }),
        408 | 504 => Err(ProviderError::Timeout),
        500..=599 => Err(ProviderError::Server {
            status,
            message: truncate(&body, 200),
        }),
        _ => Err(ProviderError::InvalidRequest(format!(
            "HTTP {status}: {}",
            truncate(&body, 200)
        ))),
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

fn parse_chat(body: &str, latency: Duration) -> Result<ChatResponse, ProviderError> {
    let reply: ChatReply = serde_json::from_str(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    let choice = reply
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ProviderError::Malformed("reply has no choices".into()))?;
    let truncated = matches!(
        choice.finish_reason.as_deref(),
        Some("length" | "max_tokens" | "MAX_TOKENS")
    );
    Ok(ChatResponse {
        text: choice.message.content.unwrap_or_default(),
        truncated,
        latency,
    })
}

fn parse_embeddings(body: &str) -> Result<Vec<EmbeddingVector>, ProviderError> {
    let mut reply: EmbedReply = serde_json::from_str(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    reply.data.sort_by_key(|d| d.index);
    reply
        .data
        .into_iter()
        .map(|d| EmbeddingVector::new(d.embedding).map_err(|e| ProviderError::Malformed(e.to_string())))
        .collect()
}

impl Provider for LiveProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let mut body = json!({
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt_text}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let started = Instant::now();
        let text = self.post("chat/completions", body)?;
        parse_chat(&text, started.elapsed())
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, ProviderError> {
        if request.texts.is_empty() {
            return Ok(EmbeddingResponse { vectors: Vec::new() });
        }
        let body = json!({ "model": request.model_name, "input": request.texts });
        let text = self.post("embeddings", body)?;
        EmbeddingResponse {
            vectors: parse_embeddings(&text)?,
        }
        .check(request)
    }
}
