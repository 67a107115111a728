//! OpenAI-compatible chat-completions client.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendReply, ChatRequest, GatewayError, Usage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff: Duration::from_millis(500) }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReplyMessage,
}

#[derive(Deserialize)]
struct WireReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

pub struct RemoteChatBackend {
    url: String,
    model: String,
    api_key: String,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for RemoteChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteChatBackend").field("url", &self.url).field("model", &self.model).finish_non_exhaustive()
    }
}

impl RemoteChatBackend {
    /// `endpoint` is the API base (e.g. `https://host/v1`) or the full
    /// `.../chat/completions` URL. The key is read from `api_key_env`.
    pub fn from_env(endpoint: &str, api_key_env: &str, model: &str) -> Result<Self, GatewayError> {
        let api_key = std::env::var(api_key_env)
            .map_err(|_| GatewayError::Config(format!("environment variable {api_key_env} is not set")))?;
        Self::new(endpoint, api_key, model)
    }

    pub fn new(endpoint: &str, api_key: impl Into<String>, model: &str) -> Result<Self, GatewayError> {
        let endpoint = endpoint.trim_end_matches('/');
        if endpoint.is_empty() {
            return Err(GatewayError::Config("remote backend needs an endpoint".into()));
        }
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint.to_string()
        } else {
            format!("{endpoint}/chat/completions")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { url, model: model.to_string(), api_key: api_key.into(), retry: RetryPolicy::default(), client })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn send_once(&self, body: &WireRequest<'_>) -> Result<reqwest::blocking::Response, reqwest::Error> {
        let mut request = self.client.post(&self.url).json(body);
        if !self.api_key.is_empty() {
            request = request.bearer_auth(&self.api_key);
        }
        request.send()
    }
}

impl Backend for RemoteChatBackend {
    fn name(&self) -> &str {
        "remote-chat"
    }

    fn chat(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let mut messages = Vec::with_capacity(2);
        if !request.system.is_empty() {
            messages.push(WireMessage { role: "system", content: &request.system });
        }
        messages.push(WireMessage { role: "user", content: &request.user });
        let body = WireRequest {
            model: &self.model,
            messages,
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };

        let attempts = self.retry.max_attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            match self.send_once(&body) {
                Ok(response) => {
                    let status = response.status();
                    let text = response
                        .text()
                        .map_err(|e| GatewayError::Transport { attempts: attempt, message: e.to_string() })?;
                    if !status.is_success() {
                        return Err(GatewayError::Backend { status: status.as_u16(), body: text });
                    }
                    let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| GatewayError::Backend {
                        status: status.as_u16(),
                        body: format!("unparseable completion body ({e}): {text}"),
                    })?;
                    let content = parsed.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default();
                    let usage = parsed
                        .usage
                        .map(|u| Usage { input_tokens: u.prompt_tokens, output_tokens: u.completion_tokens });
                    return Ok(BackendReply { text: content, usage });
                }
                Err(e) => {
                    last_error = e.to_string();
                    log::warn!("chat request attempt {attempt}/{attempts} to {} failed: {e}", self.url);
                    if attempt < attempts {
                        thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(GatewayError::Transport { attempts, message: last_error })
    }
}
