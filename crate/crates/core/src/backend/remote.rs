//! Chat-completion client for OpenAI-compatible endpoints.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{check_prompt, Backend, BackendError, CallKey, GenerationParams};

fn default_model() -> String {
    "meta-llama/Llama-2-7b-chat-hf".to_string()
}
fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    1000
}
fn default_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}
fn default_in_flight() -> usize {
    8
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions route.
    pub endpoint_url: String,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: f64,
    /// Retries after the first attempt; waits double from `retry_backoff_ms`.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    /// Environment variable holding the bearer token. Unset variable: no auth header.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    /// Cap on concurrent requests from this backend instance.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Send `top_k` as a vendor extension field.
    #[serde(default = "yes")]
    pub send_top_k: bool,
}

impl RemoteConfig {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: default_model(),
            request_timeout_secs: default_timeout(),
            max_retries: default_retries(),
            retry_backoff_ms: default_backoff(),
            api_key_env: default_key_env(),
            max_in_flight: default_in_flight(),
            send_top_k: true,
        }
    }
}

struct InFlightGate {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlightGate);

impl InFlightGate {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    top_k_enabled: AtomicBool,
    gate: InFlightGate,
}

enum Attempt {
    Done(String),
    TopKRejected,
    Retryable(String),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        if !(config.endpoint_url.starts_with("http://") || config.endpoint_url.starts_with("https://")) {
            return Err(BackendError::Config(format!(
                "endpoint_url must be an http(s) URL, got {:?}",
                config.endpoint_url
            )));
        }
        if !(config.request_timeout_secs > 0.0) {
            return Err(BackendError::Config("request_timeout_secs must be > 0".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.request_timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self {
            top_k_enabled: AtomicBool::new(config.send_top_k),
            gate: InFlightGate::new(config.max_in_flight),
            agent,
            api_key,
            config,
        })
    }

    /// Request body for one call. The prompt is sent byte-for-byte as the only user message.
    pub fn request_body(&self, prompt: &str, params: &GenerationParams) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        });
        if self.top_k_enabled.load(Ordering::Relaxed) {
            body["top_k"] = json!(params.top_k);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<Attempt, BackendError> {
        let mut req = self.agent.post(&self.config.endpoint_url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retryable(e.to_string())),
        };
        let status = resp.status();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Ok(Attempt::Retryable(format!("reading body: {e}"))),
        };
        if status.is_success() {
            return parse_completion(&text).map(Attempt::Done);
        }
        let top_k_sent = body.get("top_k").is_some();
        if top_k_sent && (status == 400 || status == 422) && text.contains("top_k") {
            return Ok(Attempt::TopKRejected);
        }
        Ok(Attempt::Retryable(format!("HTTP {status}: {}", truncate(&text, 200))))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

/// Extract the first choice's content from a chat-completion response body.
pub(crate) fn parse_completion(body: &str) -> Result<String, BackendError> {
    let resp: CompletionResponse = serde_json::from_str(body)
        .map_err(|e| BackendError::Protocol(format!("malformed completion body: {e}")))?;
    let first = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol("completion has no choices".into()))?;
    first
        .message
        .content
        .ok_or_else(|| BackendError::Protocol("first choice has no content".into()))
}

impl Backend for RemoteBackend {
    fn generate(
        &self,
        key: &CallKey,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<String, BackendError> {
        check_prompt(key, prompt)?;
        let _permit = self.gate.acquire();
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        let mut attempt = 0;
        while attempt < attempts {
            if attempt > 0 {
                let wait = self.config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(20));
                debug!(agent = %key.agent, step = key.step, phase = %key.phase, wait_ms = wait, "retrying");
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&self.request_body(prompt, params))? {
                Attempt::Done(text) => return Ok(text),
                Attempt::TopKRejected => {
                    if self.top_k_enabled.swap(false, Ordering::Relaxed) {
                        warn!("endpoint rejected top_k; sending requests without it");
                    }
                    continue;
                }
                Attempt::Retryable(reason) => last = reason,
            }
            attempt += 1;
        }
        Err(BackendError::Unavailable {
            attempts,
            reason: last,
        })
    }

    fn descriptor(&self) -> String {
        format!(
            "remote(url={}, model={})",
            self.config.endpoint_url, self.config.model_name
        )
    }
}
