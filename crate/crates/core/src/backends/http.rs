//! Blocking HTTP clients for OpenAI-style chat completion and Ollama-style
//! embedding endpoints.

use std::thread;

use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{validate_messages, BackendConfig, BackendError, ChatBackend, ChatMessage, Embedder};
use crate::index::Embedding;

fn build_client(config: &BackendConfig) -> Result<Client, BackendError> {
    config.validate()?;
    Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| BackendError::BackendUnavailable(format!("cannot build HTTP client: {e}")))
}

fn endpoint(config: &BackendConfig, path: &str) -> String {
    format!("{}{}", config.base_url.trim_end_matches('/'), path)
}

/// Send with retries on transport failures, 5xx and 429. Other statuses fail
/// immediately.
fn send_json(
    config: &BackendConfig,
    make: impl Fn() -> RequestBuilder,
) -> Result<Value, BackendError> {
    let attempts = config.max_retries + 1;
    let mut last_error = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            thread::sleep(config.backoff * 2u32.pow(attempt - 1));
        }
        let mut request = make();
        if let Some(key) = &config.api_key {
            request = request.bearer_auth(key.expose());
        }
        match request.send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    let body = resp
                        .text()
                        .map_err(|e| BackendError::MalformedResponse(e.without_url().to_string()))?;
                    return serde_json::from_str(&body)
                        .map_err(|e| BackendError::MalformedResponse(e.to_string()));
                }
                last_error = format!("server returned {status}");
                if !(status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS) {
                    return Err(BackendError::BackendUnavailable(last_error));
                }
            }
            Err(e) => last_error = e.without_url().to_string(),
        }
        log::warn!("attempt {} of {} failed: {}", attempt + 1, attempts, last_error);
    }
    Err(BackendError::BackendUnavailable(format!(
        "{attempts} attempts failed, last error: {last_error}"
    )))
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    max_tokens: u32,
    temperature: f64,
}

/// Client for `POST {base_url}/v1/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    config: BackendConfig,
    client: Client,
}

impl HttpChatClient {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let client = build_client(&config)?;
        Ok(Self { config, client })
    }
}

impl ChatBackend for HttpChatClient {
    fn chat_complete(&self, messages: &[ChatMessage], max_tokens: u32) -> Result<String, BackendError> {
        validate_messages(messages)?;
        let url = endpoint(&self.config, "/v1/chat/completions");
        let body = ChatRequest {
            model: &self.config.model,
            messages,
            max_tokens,
            temperature: self.config.temperature,
        };
        let reply = send_json(&self.config, || self.client.post(&url).json(&body))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                BackendError::MalformedResponse("missing choices[0].message.content".into())
            })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f64>,
}

/// Client for `POST {base_url}/api/embeddings`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    config: BackendConfig,
    dim: usize,
    client: Client,
}

impl HttpEmbedder {
    pub fn new(config: BackendConfig, dim: usize) -> Result<Self, BackendError> {
        let client = build_client(&config)?;
        Ok(Self { config, dim, client })
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed empty text".into()));
        }
        let url = endpoint(&self.config, "/api/embeddings");
        let body = EmbedRequest { model: &self.config.model, prompt: text };
        let reply = send_json(&self.config, || self.client.post(&url).json(&body))?;
        let reply: EmbedReply = serde_json::from_value(reply)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        if reply.embedding.len() != self.dim {
            return Err(BackendError::DimensionMismatch {
                expected: self.dim,
                actual: reply.embedding.len(),
            });
        }
        Embedding::new(reply.embedding)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))
    }
}
