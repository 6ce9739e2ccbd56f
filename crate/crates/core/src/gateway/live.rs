//! OpenAI-compatible chat-completions provider.
//!
//! Credentials come from the environment only and are never written to
//! cassettes or run records. Images are sent inline as base64 data URLs.

use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{Backend, ChatRequest, ChatResponse, GatewayError, Speaker, Usage};

pub const API_KEY_ENV: &str = "PLOTSYNTH_API_KEY";
pub const BASE_URL_ENV: &str = "PLOTSYNTH_BASE_URL";
const FALLBACK_KEY_ENV: &str = "OPENAI_API_KEY";
const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Bounded exponential backoff for transient provider failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(8) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `attempt` until it succeeds, fails permanently, or the retry
    /// budget is spent. Returns the value and the number of attempts made.
    pub fn run<T>(
        &self,
        mut attempt: impl FnMut(u32) -> Result<T, AttemptError>,
        mut sleep: impl FnMut(Duration),
    ) -> Result<(T, u32), GatewayError> {
        let mut n = 0;
        loop {
            n += 1;
            match attempt(n) {
                Ok(v) => return Ok((v, n)),
                Err(e) if e.retryable && n <= self.max_retries => {
                    tracing::warn!(attempt = n, error = %e.message, "provider call failed, retrying");
                    sleep(self.delay(n));
                }
                Err(e) => return Err(GatewayError::Provider { message: e.message, attempts: n }),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttemptError {
    pub retryable: bool,
    pub message: String,
}

impl AttemptError {
    fn from_status(status: u16, body: &str) -> Self {
        let retryable = status == 408 || status == 429 || status >= 500;
        let snippet: String = body.chars().take(300).collect();
        Self { retryable, message: format!("HTTP {status}: {snippet}") }
    }
}

pub struct LiveBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
    retry: RetryPolicy,
}

impl std::fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveBackend").field("base_url", &self.base_url).field("retry", &self.retry).finish()
    }
}

impl LiveBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, base_url: base_url.into(), api_key: api_key.into(), retry: RetryPolicy::default() }
    }

    /// Reads `PLOTSYNTH_API_KEY` (or `OPENAI_API_KEY`) and optionally
    /// `PLOTSYNTH_BASE_URL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV)
            .or_else(|_| std::env::var(FALLBACK_KEY_ENV))
            .map_err(|_| GatewayError::InvalidRequest(format!("set {API_KEY_ENV} or {FALLBACK_KEY_ENV} for the live backend")))?;
        let base = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Ok(Self::new(base, key, Duration::from_secs(120)))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post_once(&self, payload: &Value) -> Result<Value, AttemptError> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(payload)
            .map_err(|e| AttemptError { retryable: true, message: e.to_string() })?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptError { retryable: true, message: e.to_string() })?;
        if !(200..300).contains(&status) {
            return Err(AttemptError::from_status(status, &body));
        }
        serde_json::from_str(&body).map_err(|e| AttemptError { retryable: false, message: format!("bad response body: {e}") })
    }
}

/// Wire payload for one request.
pub(crate) fn build_payload(request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            let role = match m.speaker {
                Speaker::System => "system",
                Speaker::User => "user",
            };
            if m.images.is_empty() {
                json!({ "role": role, "content": m.text })
            } else {
                let mut parts = vec![json!({ "type": "text", "text": m.text })];
                parts.extend(m.images.iter().map(|png| {
                    json!({
                        "type": "image_url",
                        "image_url": { "url": format!("data:image/png;base64,{}", BASE64.encode(png.as_slice())) }
                    })
                }));
                json!({ "role": role, "content": parts })
            }
        })
        .collect();
    json!({ "model": request.model_id, "temperature": request.temperature, "messages": messages })
}

pub(crate) fn parse_completion(body: &Value) -> Result<(String, Usage), AttemptError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| AttemptError { retryable: false, message: "response has no choices[0].message.content".into() })?;
    let usage = Usage {
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok((text.to_string(), usage))
}

impl Backend for LiveBackend {
    fn respond(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let payload = build_payload(request);
        let start = Instant::now();
        let ((text, usage), attempts) = self.retry.run(
            |_| {
                let body = self.post_once(&payload)?;
                let (text, usage) = parse_completion(&body)?;
                if text.is_empty() {
                    return Err(AttemptError { retryable: true, message: "empty completion".into() });
                }
                Ok((text, usage))
            },
            std::thread::sleep,
        )?;
        Ok(ChatResponse { text, usage, latency_ms: start.elapsed().as_millis() as u64, attempts })
    }
}
