//! Live chat/completions backend over HTTPS.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, CompletionRequest, CompletionResponse, LlmError};
use crate::transport::{classify_ureq, ConcurrencyLimiter, RetryPolicy, Sleeper, ThreadSleeper, TokenBucket};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    /// Prompt sent as a single user message.
    #[default]
    Chat,
    /// Prompt sent raw.
    Completion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    #[serde(default)]
    pub api_style: ApiStyle,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_rpm() -> u32 {
    60
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    bucket: TokenBucket,
    limiter: ConcurrencyLimiter,
    sleeper: Box<dyn Sleeper>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| LlmError::Transport(format!("environment variable {} is not set", config.api_key_env)))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .build()
            .into();
        Ok(Self {
            bucket: TokenBucket::per_minute(config.requests_per_minute),
            limiter: ConcurrencyLimiter::new(config.max_in_flight),
            config,
            api_key,
            agent,
            retry: RetryPolicy::default(),
            sleeper: Box::new(ThreadSleeper),
        })
    }

    pub fn limiter(&self) -> &ConcurrencyLimiter {
        &self.limiter
    }

    fn body(&self, req: &CompletionRequest) -> Value {
        let mut body = match self.config.api_style {
            ApiStyle::Chat => json!({
                "model": req.model_id,
                "messages": [{"role": "user", "content": req.prompt}],
            }),
            ApiStyle::Completion => json!({"model": req.model_id, "prompt": req.prompt}),
        };
        body["temperature"] = json!(req.temperature);
        body["max_tokens"] = json!(req.max_tokens);
        if !req.stop_sequences.is_empty() {
            body["stop"] = json!(req.stop_sequences);
        }
        body
    }

    fn send(&self, body: &Value) -> Result<Value, ureq::Error> {
        self.bucket.acquire(self.sleeper.as_ref());
        let _permit = self.limiter.acquire();
        self.agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)?
            .body_mut()
            .read_json()
    }
}

/// Pulls text and usage out of a chat or completion response body.
pub(crate) fn parse_response(style: ApiStyle, v: &Value) -> Result<(String, usize, usize), LlmError> {
    let choice = &v["choices"][0];
    let text = match style {
        ApiStyle::Chat => choice["message"]["content"].as_str(),
        ApiStyle::Completion => choice["text"].as_str(),
    }
    .ok_or_else(|| LlmError::Transport(format!("response has no completion text: {v}")))?;
    let usage = |k: &str| v["usage"][k].as_u64().unwrap_or(0) as usize;
    Ok((text.to_string(), usage("prompt_tokens"), usage("completion_tokens")))
}

impl Backend for HttpBackend {
    fn label(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let body = self.body(request);
        let started = Instant::now();
        let v = self
            .retry
            .run(self.sleeper.as_ref(), classify_ureq, |_| self.send(&body))
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let (text, prompt_tokens, completion_tokens) = parse_response(self.config.api_style, &v)?;
        Ok(CompletionResponse {
            text,
            prompt_tokens,
            completion_tokens,
            backend: "http".into(),
            latency: started.elapsed(),
        })
    }
}
