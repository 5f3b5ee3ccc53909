//! Chat-completion backends and hypothesis extraction.
//!
//! Three backends share the [`Backend`] trait: [`LiveBackend`] talks to an
//! HTTP chat-completion endpoint, [`GlossEchoBackend`] answers with the gloss
//! section of the prompt, and [`ReplayBackend`] serves recorded responses
//! keyed by prompt hash.

mod extract;
mod live;
mod mock;
pub mod transcript;

use std::time::{Duration, Instant};

pub use extract::{extract_hypothesis, ExtractError};
pub use live::{LiveBackend, LiveConfig, API_KEY_ENV, DEFAULT_ENDPOINT};
pub use mock::{echo_glosses, Fixture, GlossEchoBackend, ReplayBackend};

use crate::http::HttpError;
use crate::prompting::PromptScript;

#[derive(Debug, Clone, thiserror::Error)]
pub enum LlmError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("credential missing: set {0}")]
    MissingCredential(String),
    #[error("no recorded response for prompt {hash}")]
    FixtureMiss { hash: String },
    #[error("fixture line {line}: {reason}")]
    Fixture { line: usize, reason: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no translation found in model output")]
    Extraction { raw_text: String },
}

impl LlmError {
    /// Raw model output, when the backend produced any.
    pub fn raw_text(&self) -> Option<&str> {
        match self {
            LlmError::Extraction { raw_text } => Some(raw_text),
            _ => None,
        }
    }
}

pub type Result<T, E = LlmError> = std::result::Result<T, E>;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-16k-0613";

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub script: PromptScript,
    pub model: String,
    pub temperature: f64,
    pub max_output: u32,
}

impl CompletionRequest {
    /// Greedy decoding (temperature 0) with a 512-token output cap.
    pub fn new(script: PromptScript, model: impl Into<String>) -> Self {
        Self {
            script,
            model: model.into(),
            temperature: 0.0,
            max_output: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.script.messages.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        Ok(())
    }
}

/// What a backend returns before extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCompletion {
    pub text: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub raw_text: String,
    pub extracted: String,
    pub latency: Duration,
    pub backend: String,
    pub attempt_count: u32,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, request: &CompletionRequest) -> Result<RawCompletion>;
}

/// Sends the request and extracts the hypothesis. An unparseable answer is
/// reported as [`LlmError::Extraction`] carrying the raw text.
pub fn complete(backend: &dyn Backend, request: &CompletionRequest) -> Result<CompletionResult> {
    request.validate()?;
    let started = Instant::now();
    let raw = backend.generate(request)?;
    let latency = started.elapsed();
    let extracted = extract_hypothesis(&raw.text).map_err(|_| LlmError::Extraction {
        raw_text: raw.text.clone(),
    })?;
    Ok(CompletionResult {
        raw_text: raw.text,
        extracted,
        latency,
        backend: backend.name().to_string(),
        attempt_count: raw.attempts,
    })
}
