use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, CompletionRequest, LlmError, RawCompletion, Result};
use crate::http::{HttpError, JsonClient, RateLimiter, UreqTransport};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "ILMT_API_KEY";

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub endpoint: String,
    pub requests_per_minute: u32,
    pub timeout: Duration,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            requests_per_minute: 60,
            timeout: Duration::from_secs(120),
        }
    }
}

/// OpenAI-style chat-completion client. Retries and rate limiting live in
/// the wrapped [`JsonClient`].
pub struct LiveBackend {
    endpoint: String,
    token: String,
    client: JsonClient,
}

impl LiveBackend {
    pub fn new(endpoint: impl Into<String>, token: impl Into<String>, client: JsonClient) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: token.into(),
            client,
        }
    }

    /// Reads the token from [`API_KEY_ENV`]; everything else comes from
    /// `config`.
    pub fn from_env(config: &LiveConfig) -> Result<Self> {
        let token = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| LlmError::MissingCredential(API_KEY_ENV.to_string()))?;
        let mut client = JsonClient::new(Box::new(UreqTransport::new(config.timeout)));
        client.limiter = Some(Arc::new(RateLimiter::per_minute(
            config.requests_per_minute,
        )));
        Ok(Self::new(config.endpoint.clone(), token, client))
    }

    pub fn request_body(request: &CompletionRequest) -> Value {
        let messages: Vec<Value> = request
            .script
            .messages
            .iter()
            .map(|m| json!({ "role": m.role.as_str(), "content": m.text }))
            .collect();
        json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        })
    }
}

impl Backend for LiveBackend {
    fn name(&self) -> &str {
        "live"
    }

    fn generate(&self, request: &CompletionRequest) -> Result<RawCompletion> {
        let body = Self::request_body(request);
        let (resp, attempts) = self.client.post(&self.endpoint, Some(&self.token), &body)?;
        let text = resp["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                LlmError::Http(HttpError::Protocol {
                    message: "missing choices[0].message.content".into(),
                    payload: resp.to_string(),
                })
            })?;
        Ok(RawCompletion {
            text: text.to_string(),
            attempts,
        })
    }
}
