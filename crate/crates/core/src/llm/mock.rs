use std::collections::BTreeMap;
use std::path::Path;

use super::{Backend, CompletionRequest, LlmError, RawCompletion, Result};
use crate::prompting::{PromptScript, GLOSS_SEPARATOR, REQUEST_PREFIX, REVISION_LINE};
use crate::tsv;

/// The gloss-echo rule: in the last user message, take every `[tag]: text`
/// line (tag other than `zh`) after the last `...` separator line, stopping
/// at the closing request or revision line, and join the texts with single
/// spaces. Prompts without a separator echo nothing.
pub fn echo_glosses(script: &PromptScript) -> String {
    let text = script.last_user_text();
    let lines: Vec<&str> = text.lines().collect();
    let Some(start) = lines.iter().rposition(|l| *l == GLOSS_SEPARATOR) else {
        return String::new();
    };
    let mut glosses = Vec::new();
    for line in &lines[start + 1..] {
        if line.starts_with(REQUEST_PREFIX) || *line == REVISION_LINE {
            break;
        }
        let Some(rest) = line.strip_prefix('[') else {
            continue;
        };
        let Some((tag, value)) = rest.split_once("]: ") else {
            continue;
        };
        if tag != "zh" {
            glosses.push(value.trim());
        }
    }
    glosses.join(" ")
}

/// Deterministic offline backend answering with the prompt's own glosses.
#[derive(Debug, Default, Clone)]
pub struct GlossEchoBackend;

impl Backend for GlossEchoBackend {
    fn name(&self) -> &str {
        "mock-gloss"
    }

    fn generate(&self, request: &CompletionRequest) -> Result<RawCompletion> {
        Ok(RawCompletion {
            text: echo_glosses(&request.script),
            attempts: 1,
        })
    }
}

/// Recorded responses keyed by prompt hash ([`PromptScript::hash`]).
///
/// File format, one record per line: `<sha256-hex>\t<escaped raw text>`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Fixture {
    responses: BTreeMap<String, String>,
}

impl Fixture {
    pub fn insert(&mut self, script_hash: impl Into<String>, raw_text: impl Into<String>) {
        self.responses.insert(script_hash.into(), raw_text.into());
    }

    pub fn get(&self, script_hash: &str) -> Option<&str> {
        self.responses.get(script_hash).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn render(&self) -> String {
        self.responses
            .iter()
            .map(|(h, raw)| format!("{h}\t{}\n", tsv::escape(raw)))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fixture = Fixture::default();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| LlmError::Fixture {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let (hash, raw) = line
                .split_once('\t')
                .ok_or_else(|| err("expected hash<TAB>text"))?;
            if hash.len() != 64 || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(err("prompt hash is not a sha256 hex digest"));
            }
            fixture.insert(hash, tsv::unescape(raw));
        }
        Ok(fixture)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Fixture {
            line: 0,
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }
}

pub struct ReplayBackend {
    fixture: Fixture,
}

impl ReplayBackend {
    pub fn new(fixture: Fixture) -> Self {
        Self { fixture }
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "mock-replay"
    }

    fn generate(&self, request: &CompletionRequest) -> Result<RawCompletion> {
        let hash = request.script.hash();
        match self.fixture.get(&hash) {
            Some(raw) => Ok(RawCompletion {
                text: raw.to_string(),
                attempts: 1,
            }),
            None => Err(LlmError::FixtureMiss { hash }),
        }
    }
}
