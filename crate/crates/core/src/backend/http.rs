use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, Embedder, EmbeddingRequest, EmbeddingResponse, GenerationRequest,
    GenerationResponse, InfillBackend,
};

/// Environment variable holding the backend base URL.
pub const BACKEND_URL_ENV: &str = "SAP_BACKEND_URL";

const MAX_BODY_BYTES: u64 = 512 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 50,
            multiplier: 2,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let factor = u64::from(self.multiplier.max(1)).saturating_pow(attempt.saturating_sub(1));
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Deserialize)]
struct ErrorBody {
    error: String,
}

/// Client for the `/infill` and `/embed` endpoints.
///
/// An optional token map rewrites engine sentinel strings (e.g. `<X>`) into
/// the model's own vocabulary entries on the way out, and back on the way in.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    token_map: Vec<(String, String)>,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            retry,
            token_map: Vec::new(),
        }
    }

    /// Reads the base URL from [`BACKEND_URL_ENV`].
    pub fn from_env(timeout: Duration, retry: RetryPolicy) -> Option<Self> {
        std::env::var(BACKEND_URL_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .map(|url| Self::new(url, timeout, retry))
    }

    pub fn with_token_map<I, K, V>(mut self, map: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        self.token_map = map.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn engine_to_model(&self, text: &str) -> String {
        self.token_map
            .iter()
            .fold(text.to_string(), |acc, (engine, model)| acc.replace(engine, model))
    }

    fn model_to_engine(&self, text: &str) -> String {
        self.token_map
            .iter()
            .fold(text.to_string(), |acc, (engine, model)| acc.replace(model, engine))
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let payload = serde_json::to_string(body)
            .map_err(|e| BackendError::Protocol(format!("encode request: {e}")))?;
        let url = format!("{}{}", self.base_url, path);
        let attempts = self.retry.attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            match self.post_once(&url, &payload) {
                Ok(text) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| BackendError::Protocol(format!("decode response: {e}")))
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::debug!("{url}: attempt {attempt}/{attempts} failed: {msg}");
                    last_error = msg;
                    if attempt < attempts {
                        std::thread::sleep(self.retry.backoff(attempt));
                    }
                }
            }
        }
        Err(BackendError::Transport {
            attempts,
            message: last_error,
        })
    }

    fn post_once(&self, url: &str, payload: &str) -> Result<String, Attempt> {
        let mut resp = self
            .agent
            .post(url)
            .header("content-type", "application/json; charset=utf-8")
            .send(payload)
            .map_err(classify)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_string()
            .map_err(classify)?;
        match status {
            200..=299 => Ok(text),
            500..=599 => Err(Attempt::Retry(format!("HTTP {status}: {}", error_message(&text)))),
            _ => Err(Attempt::Fatal(BackendError::Protocol(format!(
                "HTTP {status}: {}",
                error_message(&text)
            )))),
        }
    }
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

fn classify(e: ureq::Error) -> Attempt {
    match e {
        ureq::Error::Io(_)
        | ureq::Error::Timeout(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed => Attempt::Retry(e.to_string()),
        other => Attempt::Fatal(BackendError::Protocol(other.to_string())),
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<ErrorBody>(body)
        .map(|b| b.error)
        .unwrap_or_else(|_| body.chars().take(200).collect())
}

impl InfillBackend for HttpBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let wire = GenerationRequest {
            prompt: self.engine_to_model(&req.prompt),
            ..req.clone()
        };
        let resp: GenerationResponse = self.post("/infill", &wire)?;
        Ok(GenerationResponse {
            infill: self.model_to_engine(&resp.infill),
        })
    }

    fn name(&self) -> String {
        format!("http({})", self.base_url)
    }
}

impl Embedder for HttpBackend {
    fn embed(&self, req: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError> {
        req.validate()?;
        let resp: EmbeddingResponse = self.post("/embed", req)?;
        resp.validate(req.texts.len())?;
        Ok(resp)
    }

    fn name(&self) -> String {
        format!("http({})", self.base_url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_exponentially() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_millis(50));
        assert_eq!(p.backoff(2), Duration::from_millis(100));
        assert_eq!(p.backoff(3), Duration::from_millis(200));
    }

    #[test]
    fn token_map_round_trips() {
        let b = HttpBackend::new("http://localhost:1", Duration::from_secs(1), RetryPolicy::default())
            .with_token_map([("<X>", "<extra_id_0>"), ("</s>", "<extra_id_99>")]);
        let p = "a</s>\nb: <X>";
        let wire = b.engine_to_model(p);
        assert_eq!(wire, "a<extra_id_99>\nb: <extra_id_0>");
        assert_eq!(b.model_to_engine(&wire), p);
    }
}
