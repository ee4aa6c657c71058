//! HTTP backends speaking the OpenAI-style completion and chat schemas.
//!
//! Completion requests ask for a single greedy token with the top
//! log-probabilities of that position. Responses are accepted in either the
//! legacy `logprobs.top_logprobs[0] = {token: logprob}` layout or the newer
//! `logprobs.content[0].top_logprobs = [{token, logprob}]` layout.

use std::time::Duration;

use rand::Rng;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::prompting::build_chat_messages;
use crate::scalar::Real;

use super::{Backend, BackendError, BackendKind, BackendResponse, GenerationRequest, TokenDistribution, MAX_TOP_TOKENS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full URL of the completion or chat endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub timeout_ms: u64,
    pub max_inflight: usize,
    pub retries: u32,
    /// Base delay of the exponential backoff.
    pub backoff_ms: u64,
    pub top_logprobs: usize,
    pub max_chat_tokens: u32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            auth_env: None,
            timeout_ms: 30_000,
            max_inflight: 4,
            retries: 3,
            backoff_ms: 250,
            top_logprobs: MAX_TOP_TOKENS,
            max_chat_tokens: 16,
        }
    }
}

#[derive(Debug, Clone)]
struct HttpClient {
    client: Client,
    cfg: HttpConfig,
    token: Option<String>,
}

impl HttpClient {
    fn new(cfg: HttpConfig) -> Result<Self, BackendError> {
        if cfg.endpoint.is_empty() {
            return Err(BackendError::Config("backend.endpoint is required".into()));
        }
        reqwest::Url::parse(&cfg.endpoint)
            .map_err(|e| BackendError::Config(format!("bad endpoint {:?}: {e}", cfg.endpoint)))?;
        if cfg.max_inflight == 0 {
            return Err(BackendError::Config("backend.max_inflight must be at least 1".into()));
        }
        let token = match &cfg.auth_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError::Config(format!("auth variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { client, cfg, token })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.cfg.backoff_ms;
        let exp = base.saturating_mul(1u64 << attempt.min(16));
        let jitter = if base > 0 { rand::thread_rng().gen_range(0..base) } else { 0 };
        Duration::from_millis(exp + jitter)
    }

    fn post_json(&self, body: &Value, correlation_id: u64) -> Result<Value, BackendError> {
        let mut last_error = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            let mut req = self
                .client
                .post(&self.cfg.endpoint)
                .header("X-Correlation-Id", correlation_id.to_string())
                .json(body);
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<Value>()
                            .map_err(|e| BackendError::Protocol(format!("invalid JSON body: {e}")));
                    }
                    if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                        log::debug!("request {correlation_id}: HTTP {status}, attempt {}", attempt + 1);
                        last_error = format!("HTTP {status}");
                        continue;
                    }
                    let text = resp.text().unwrap_or_default();
                    return Err(BackendError::Protocol(format!("HTTP {status}: {text}")));
                }
                Err(e) => {
                    log::debug!("request {correlation_id}: {e}, attempt {}", attempt + 1);
                    last_error = e.to_string();
                }
            }
        }
        Err(BackendError::Unavailable(format!(
            "{} attempts failed, last error: {last_error}",
            self.cfg.retries + 1
        )))
    }
}

/// Pulls the first-position top log-probabilities out of a completion response.
pub fn extract_top_logprobs(body: &Value) -> Result<Vec<(String, f64)>, BackendError> {
    let choice = body
        .pointer("/choices/0")
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    let logprobs = match choice.get("logprobs") {
        Some(v) if !v.is_null() => v,
        _ => return Err(BackendError::Capability("response carries no logprobs".into())),
    };
    if let Some(first) = logprobs.pointer("/top_logprobs/0").and_then(Value::as_object) {
        return Ok(first
            .iter()
            .filter_map(|(tok, lp)| lp.as_f64().map(|lp| (tok.clone(), lp)))
            .collect());
    }
    if let Some(list) = logprobs.pointer("/content/0/top_logprobs").and_then(Value::as_array) {
        return Ok(list
            .iter()
            .filter_map(|e| Some((e.get("token")?.as_str()?.to_string(), e.get("logprob")?.as_f64()?)))
            .collect());
    }
    Err(BackendError::Capability("logprobs present but no top-token list".into()))
}

#[derive(Debug, Clone)]
pub struct HttpCompletionBackend {
    http: HttpClient,
}

impl HttpCompletionBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, BackendError> {
        Ok(Self {
            http: HttpClient::new(cfg)?,
        })
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.http.cfg.model,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 0,
            "logprobs": self.http.cfg.top_logprobs,
        })
    }
}

impl<F: Real> Backend<F> for HttpCompletionBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::HttpCompletion
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<BackendResponse<F>, BackendError> {
        let body = self.http.post_json(&self.request_body(&request.prompt.text), request.correlation_id)?;
        let entries = extract_top_logprobs(&body)?;
        Ok(BackendResponse::Distribution(TokenDistribution::new(
            entries.into_iter().map(|(t, lp)| (t, F::from_f64_lossy(lp))),
        )))
    }

    fn max_inflight(&self) -> usize {
        self.http.cfg.max_inflight
    }
}

#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    http: HttpClient,
}

impl HttpChatBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, BackendError> {
        Ok(Self {
            http: HttpClient::new(cfg)?,
        })
    }
}

impl<F: Real> Backend<F> for HttpChatBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::HttpChat
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<BackendResponse<F>, BackendError> {
        let (system, user) = build_chat_messages(request.prompt);
        let body = json!({
            "model": self.http.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": 0,
            "max_tokens": self.http.cfg.max_chat_tokens,
        });
        let resp = self.http.post_json(&body, request.correlation_id)?;
        let text = resp
            .pointer("/choices/0/message/content")
            .or_else(|| resp.pointer("/choices/0/text"))
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Protocol("chat response has no message content".into()))?;
        Ok(BackendResponse::Completion(text.to_string()))
    }

    fn max_inflight(&self) -> usize {
        self.http.cfg.max_inflight
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legacy_logprobs_layout() {
        let body = json!({"choices": [{"text": " 0", "logprobs": {"top_logprobs": [{" 0": -0.1, " 1": -2.0}]}}]});
        let mut got = extract_top_logprobs(&body).unwrap();
        got.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(got, vec![(" 0".to_string(), -0.1), (" 1".to_string(), -2.0)]);
    }

    #[test]
    fn content_logprobs_layout() {
        let body = json!({"choices": [{"logprobs": {"content": [{"token": "7", "logprob": -0.3,
            "top_logprobs": [{"token": "7", "logprob": -0.3}, {"token": "2", "logprob": -1.5}]}]}}]});
        assert_eq!(
            extract_top_logprobs(&body).unwrap(),
            vec![("7".to_string(), -0.3), ("2".to_string(), -1.5)]
        );
    }

    #[test]
    fn missing_logprobs_is_capability_error() {
        let body = json!({"choices": [{"text": " 0", "logprobs": null}]});
        assert!(matches!(extract_top_logprobs(&body), Err(BackendError::Capability(_))));
        assert!(matches!(extract_top_logprobs(&json!({})), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn config_validation() {
        assert!(HttpCompletionBackend::new(HttpConfig::default()).is_err());
        let cfg = HttpConfig {
            endpoint: "http://127.0.0.1:1/v1/completions".into(),
            auth_env: Some("TKGCAST_TEST_SURELY_UNSET_VAR".into()),
            ..HttpConfig::default()
        };
        assert!(matches!(HttpCompletionBackend::new(cfg), Err(BackendError::Config(_))));
    }
}
