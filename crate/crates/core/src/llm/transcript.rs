//! Plain-text audit log of every prompt sent and every answer received.
//!
//! ```text
//! === exchange ===
//! id: <sentence id>
//! strategy: <strategy label>
//! run: <run index>
//! phase: <trial|final>
//! purpose: <what this call was for>
//! prompt-sha256: <hash of the canonical prompt>
//! --- user ---
//! <message text>
//! === response ===          (or `=== error ===`)
//! <raw model output or error message>
//! === end ===
//! ```

use crate::corpus::SentenceId;
use crate::prompting::{Message, PromptScript, Role};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Response(String),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub sentence_id: SentenceId,
    pub strategy: String,
    pub run: usize,
    pub phase: String,
    pub purpose: String,
    pub prompt_sha256: String,
    pub messages: Vec<Message>,
    pub outcome: Outcome,
}

impl Exchange {
    pub fn new(
        sentence_id: SentenceId,
        strategy: &str,
        run: usize,
        phase: &str,
        purpose: impl Into<String>,
        script: &PromptScript,
        outcome: Outcome,
    ) -> Self {
        Self {
            sentence_id,
            strategy: strategy.to_string(),
            run,
            phase: phase.to_string(),
            purpose: purpose.into(),
            prompt_sha256: script.hash(),
            messages: script.messages.clone(),
            outcome,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::from("=== exchange ===\n");
        out.push_str(&format!("id: {}\n", self.sentence_id));
        out.push_str(&format!("strategy: {}\n", self.strategy));
        out.push_str(&format!("run: {}\n", self.run));
        out.push_str(&format!("phase: {}\n", self.phase));
        out.push_str(&format!("purpose: {}\n", self.purpose));
        out.push_str(&format!("prompt-sha256: {}\n", self.prompt_sha256));
        for m in &self.messages {
            out.push_str(&format!("--- {} ---\n{}\n", m.role.as_str(), m.text));
        }
        let (tag, body) = match &self.outcome {
            Outcome::Response(r) => ("response", r),
            Outcome::Error(e) => ("error", e),
        };
        out.push_str(&format!("=== {tag} ===\n{body}\n=== end ===\n"));
        out
    }

    pub fn response(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Response(r) => Some(r),
            Outcome::Error(_) => None,
        }
    }
}

pub fn render_all(exchanges: &[Exchange]) -> String {
    exchanges.iter().map(Exchange::render).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transcript line {line}: {reason}")]
pub struct TranscriptError {
    pub line: usize,
    pub reason: String,
}

fn role_header(line: &str) -> Option<Role> {
    line.strip_prefix("--- ")?
        .strip_suffix(" ---")
        .and_then(Role::parse)
}

/// Parses text produced by [`render_all`].
pub fn parse(text: &str) -> Result<Vec<Exchange>, TranscriptError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |line: usize, reason: &str| TranscriptError {
        line: line + 1,
        reason: reason.to_string(),
    };
    while i < lines.len() {
        if lines[i].is_empty() {
            i += 1;
            continue;
        }
        if lines[i] != "=== exchange ===" {
            return Err(err(i, "expected `=== exchange ===`"));
        }
        i += 1;
        let mut header = |key: &str| -> Result<String, TranscriptError> {
            let line = lines.get(i).ok_or_else(|| err(i, "truncated header"))?;
            let value = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(": "))
                .ok_or_else(|| err(i, &format!("expected `{key}:`")))?;
            i += 1;
            Ok(value.to_string())
        };
        let id = header("id")?;
        let strategy = header("strategy")?;
        let run = header("run")?;
        let phase = header("phase")?;
        let purpose = header("purpose")?;
        let prompt_sha256 = header("prompt-sha256")?;
        let run = run
            .parse()
            .map_err(|_| err(i - 5, "run is not an integer"))?;

        let mut messages = Vec::new();
        let mut current: Option<(Role, Vec<&str>)> = None;
        let outcome_tag = loop {
            let line = *lines
                .get(i)
                .ok_or_else(|| err(i, "unterminated exchange"))?;
            i += 1;
            if let Some(role) = role_header(line) {
                if let Some((r, body)) = current.take() {
                    messages.push(Message {
                        role: r,
                        text: body.join("\n"),
                    });
                }
                current = Some((role, Vec::new()));
            } else if line == "=== response ===" || line == "=== error ===" {
                break line;
            } else if let Some((_, body)) = current.as_mut() {
                body.push(line);
            } else {
                return Err(err(i - 1, "text outside a message"));
            }
        };
        if let Some((r, body)) = current.take() {
            messages.push(Message {
                role: r,
                text: body.join("\n"),
            });
        }
        let mut body = Vec::new();
        loop {
            let line = *lines
                .get(i)
                .ok_or_else(|| err(i, "missing `=== end ===`"))?;
            i += 1;
            if line == "=== end ===" {
                break;
            }
            body.push(line);
        }
        let body = body.join("\n");
        let outcome = if outcome_tag == "=== response ===" {
            Outcome::Response(body)
        } else {
            Outcome::Error(body)
        };
        out.push(Exchange {
            sentence_id: SentenceId::new(id),
            strategy,
            run,
            phase,
            purpose,
            prompt_sha256,
            messages,
            outcome,
        });
    }
    Ok(out)
}
