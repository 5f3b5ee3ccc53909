//! Prompt rendering for every strategy.
//!
//! All renderers are pure functions of their arguments. The scaffold wording
//! is fixed; only the language name and tag vary. A KNN-RPC block looks like
//!
//! ```text
//! You are an Amis language translator. The followings are some [zh] to [amis] examples.
//! [zh]: <neighbor source>
//! [amis]: <neighbor target>
//! ...
//! [zh]: <segment>
//! [amis]: <gloss>
//! Based on the above examples. Could you help to translate [zh]: <sentence>
//! ```
//!
//! The `...` line always separates the neighbor section from the gloss
//! section, even when either is empty.

use sha2::{Digest, Sha256};

use crate::corpus::{SentenceId, SentencePair};
use crate::retrieval::{RetrievedContext, WordGloss};

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("n-shot prompting needs at least one shot")]
    NoShots,
    #[error("chain-of-thought prompting needs at least one demonstration")]
    NoDemonstrations,
    #[error("invalid demonstration {id}: {reason}")]
    InvalidDemonstration { id: String, reason: String },
    #[error("learning-from-mistakes prompting needs at least one example")]
    NoLfmExamples,
    #[error("LFM example {id} has an empty {field}")]
    IncompleteLfmExample { id: String, field: &'static str },
    #[error("trial translation is empty")]
    EmptyTrial,
}

pub type Result<T, E = PromptError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "system" => Some(Role::System),
            "user" => Some(Role::User),
            "assistant" => Some(Role::Assistant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Zeroshot,
    Nshot,
    KnnRpc,
    Cot,
    LfmRefine,
}

impl PromptKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::Zeroshot => "zeroshot",
            PromptKind::Nshot => "nshot",
            PromptKind::KnnRpc => "knn_rpc",
            PromptKind::Cot => "cot",
            PromptKind::LfmRefine => "lfm_refine",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptMeta {
    pub k: Option<usize>,
    pub q: Option<usize>,
    pub n_shots: Option<usize>,
    pub source_id: Option<SentenceId>,
}

/// An ordered chat conversation ready to send; the last message is always
/// from the user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptScript {
    pub messages: Vec<Message>,
    pub kind: PromptKind,
    pub meta: PromptMeta,
}

impl PromptScript {
    pub fn with_source_id(mut self, id: SentenceId) -> Self {
        self.meta.source_id = Some(id);
        self
    }

    /// Canonical text form: each message as a `--- role ---` line followed by
    /// its text and a newline.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str("--- ");
            out.push_str(m.role.as_str());
            out.push_str(" ---\n");
            out.push_str(&m.text);
            out.push('\n');
        }
        out
    }

    /// SHA-256 of [`canonical_text`](Self::canonical_text), hex-encoded. Keys
    /// replay fixtures.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }

    pub fn char_len(&self) -> usize {
        self.messages.iter().map(|m| m.text.chars().count()).sum()
    }

    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .unwrap_or("")
    }
}

/// Target language: display name for prose, lowercase tag for `[tag]:` lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Language {
    pub name: String,
    pub tag: String,
}

impl Language {
    pub fn new(name: &str) -> Self {
        let name = name.trim();
        Self {
            name: name.to_string(),
            tag: name
                .to_lowercase()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join("-"),
        }
    }

    fn article(&self) -> &'static str {
        match self.name.chars().next() {
            Some(c) if "AEIOUaeiou".contains(c) => "an",
            _ => "a",
        }
    }
}

pub const GLOSS_SEPARATOR: &str = "...";
pub const REQUEST_PREFIX: &str = "Based on the above examples. Could you help to translate [zh]: ";
pub const ANALYZE_LINE: &str =
    "Please analyze the differences between [Your Answer] and [Correct Answer] results.";
pub const REVISION_LINE: &str = "Check whether the following sentence needs revision:";
pub const YOUR_ANSWER: &str = "[Your Answer]:";
pub const CORRECT_ANSWER: &str = "[Correct Answer]:";

fn translator_line(lang: &Language) -> String {
    format!(
        "You are {} {} language translator.",
        lang.article(),
        lang.name
    )
}

fn preamble(lang: &Language) -> String {
    format!(
        "{} The followings are some [zh] to [{}] examples.",
        translator_line(lang),
        lang.tag
    )
}

fn push_pair(out: &mut String, lang: &Language, zh: &str, target: &str) {
    out.push_str("[zh]: ");
    out.push_str(zh);
    out.push('\n');
    out.push('[');
    out.push_str(&lang.tag);
    out.push_str("]: ");
    out.push_str(target);
    out.push('\n');
}

fn request_line(sentence: &str) -> String {
    format!("{REQUEST_PREFIX}{sentence}")
}

/// Preamble, neighbor pairs, separator and usable glosses; no closing line.
fn rpc_block(rpc: &RetrievedContext, lang: &Language) -> String {
    let mut out = preamble(lang);
    out.push('\n');
    for n in &rpc.neighbors {
        push_pair(&mut out, lang, &n.pair.source, &n.pair.target);
    }
    out.push_str(GLOSS_SEPARATOR);
    out.push('\n');
    for g in rpc.usable_glosses() {
        push_gloss(&mut out, lang, g);
    }
    out
}

fn push_gloss(out: &mut String, lang: &Language, g: &WordGloss) {
    push_pair(out, lang, &g.surface, &g.gloss);
}

fn knn_rpc_text(rpc: &RetrievedContext, lang: &Language) -> String {
    let mut out = rpc_block(rpc, lang);
    out.push_str(&request_line(&rpc.query));
    out
}

pub fn render_zeroshot(sentence: &str, lang: &Language) -> PromptScript {
    let text = format!(
        "{} Could you help to translate the following [zh] sentence into {}?\n[zh]: {sentence}",
        translator_line(lang),
        lang.name
    );
    PromptScript {
        messages: vec![Message::user(text)],
        kind: PromptKind::Zeroshot,
        meta: PromptMeta::default(),
    }
}

/// Fixed example pairs in the given order, then the request. Reordering the
/// shots changes the output.
pub fn render_nshot(
    sentence: &str,
    shots: &[SentencePair],
    lang: &Language,
) -> Result<PromptScript> {
    if shots.is_empty() {
        return Err(PromptError::NoShots);
    }
    let mut text = preamble(lang);
    text.push('\n');
    for s in shots {
        push_pair(&mut text, lang, &s.source, &s.target);
    }
    text.push_str(&request_line(sentence));
    Ok(PromptScript {
        messages: vec![Message::user(text)],
        kind: PromptKind::Nshot,
        meta: PromptMeta {
            n_shots: Some(shots.len()),
            ..Default::default()
        },
    })
}

pub fn render_knn_rpc(rpc: &RetrievedContext, lang: &Language) -> PromptScript {
    PromptScript {
        messages: vec![Message::user(knn_rpc_text(rpc, lang))],
        kind: PromptKind::KnnRpc,
        meta: PromptMeta {
            k: Some(rpc.k),
            ..Default::default()
        },
    }
}

/// A worked example: a reference pair, its own RPC, and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CotDemonstration {
    pub sample: SentencePair,
    pub rpc: RetrievedContext,
}

impl CotDemonstration {
    pub fn ground_truth(&self) -> &str {
        &self.sample.target
    }

    fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| PromptError::InvalidDemonstration {
            id: self.sample.id.to_string(),
            reason: reason.to_string(),
        };
        if self.rpc.query != self.sample.source {
            return Err(invalid("RPC query differs from the sample source"));
        }
        if self
            .rpc
            .neighbors
            .iter()
            .any(|n| n.pair.id == self.sample.id)
        {
            return Err(invalid("RPC retrieves the demonstration itself"));
        }
        Ok(())
    }
}

/// One user/assistant turn pair per demonstration, then the query.
pub fn render_cot(
    rpc: &RetrievedContext,
    demos: &[CotDemonstration],
    lang: &Language,
) -> Result<PromptScript> {
    if demos.is_empty() {
        return Err(PromptError::NoDemonstrations);
    }
    let mut messages = Vec::with_capacity(demos.len() * 2 + 1);
    for demo in demos {
        demo.validate()?;
        messages.push(Message::user(knn_rpc_text(&demo.rpc, lang)));
        messages.push(Message::assistant(demo.ground_truth()));
    }
    messages.push(Message::user(knn_rpc_text(rpc, lang)));
    Ok(PromptScript {
        messages,
        kind: PromptKind::Cot,
        meta: PromptMeta {
            k: Some(rpc.k),
            q: Some(demos.len()),
            ..Default::default()
        },
    })
}

/// A past trial translation contrasted with its reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LfmExample {
    pub id: SentenceId,
    pub source: String,
    pub reference: String,
    pub hypothesis: String,
}

fn lfm_block(out: &mut String, ex: &LfmExample) {
    out.push_str(ANALYZE_LINE);
    out.push('\n');
    out.push_str("[zh]: ");
    out.push_str(&ex.source);
    out.push('\n');
    out.push_str(YOUR_ANSWER);
    out.push(' ');
    out.push_str(&ex.hypothesis);
    out.push('\n');
    out.push_str(CORRECT_ANSWER);
    out.push(' ');
    out.push_str(&ex.reference);
    out.push('\n');
}

/// Error examples, the target's RPC, and the revision request ending in an
/// open `[Correct Answer]:` slot.
pub fn render_lfm_refine(
    examples: &[LfmExample],
    target_rpc: &RetrievedContext,
    trial: &str,
    lang: &Language,
) -> Result<PromptScript> {
    if examples.is_empty() {
        return Err(PromptError::NoLfmExamples);
    }
    for ex in examples {
        let field = if ex.source.trim().is_empty() {
            Some("source")
        } else if ex.reference.trim().is_empty() {
            Some("reference")
        } else if ex.hypothesis.trim().is_empty() {
            Some("hypothesis")
        } else {
            None
        };
        if let Some(field) = field {
            return Err(PromptError::IncompleteLfmExample {
                id: ex.id.to_string(),
                field,
            });
        }
    }
    if trial.trim().is_empty() {
        return Err(PromptError::EmptyTrial);
    }
    let mut text = String::new();
    for ex in examples {
        lfm_block(&mut text, ex);
    }
    text.push('\n');
    text.push_str(&rpc_block(target_rpc, lang));
    text.push_str(REVISION_LINE);
    text.push('\n');
    text.push_str("[zh]: ");
    text.push_str(&target_rpc.query);
    text.push('\n');
    text.push_str(YOUR_ANSWER);
    text.push(' ');
    text.push_str(trial);
    text.push('\n');
    text.push_str(CORRECT_ANSWER);
    Ok(PromptScript {
        messages: vec![Message::user(text)],
        kind: PromptKind::LfmRefine,
        meta: PromptMeta {
            k: Some(target_rpc.k),
            q: Some(examples.len()),
            ..Default::default()
        },
    })
}

/// Character budget for a whole script.
pub const DEFAULT_CHAR_BUDGET: usize = 48_000;

/// Re-renders with neighbors dropped, lowest similarity first, until the
/// script fits in `budget` characters. The query RPC is trimmed first, then
/// demonstration RPCs from the last demonstration backwards. Returns the
/// script and the number of neighbors dropped; if nothing is left to drop the
/// script may still exceed the budget.
pub fn fit_to_budget<F>(
    query: &RetrievedContext,
    demos: &[CotDemonstration],
    budget: usize,
    render: F,
) -> Result<(PromptScript, usize)>
where
    F: Fn(&RetrievedContext, &[CotDemonstration]) -> Result<PromptScript>,
{
    let mut script = render(query, demos)?;
    if script.char_len() <= budget {
        return Ok((script, 0));
    }
    let mut query = query.clone();
    let mut demos = demos.to_vec();
    let mut dropped = 0;
    while script.char_len() > budget {
        let victim = if !query.neighbors.is_empty() {
            &mut query.neighbors
        } else if let Some(d) = demos.iter_mut().rev().find(|d| !d.rpc.neighbors.is_empty()) {
            &mut d.rpc.neighbors
        } else {
            tracing::warn!(
                budget,
                len = script.char_len(),
                "prompt over budget with no neighbors left"
            );
            break;
        };
        victim.pop();
        dropped += 1;
        script = render(&query, &demos)?;
    }
    if dropped > 0 {
        tracing::info!(dropped, budget, "dropped neighbors to fit prompt budget");
    }
    Ok((script, dropped))
}

/// Lines of `text` that reveal `reference` outside learning-from-mistakes
/// example blocks for other sentences. `own_source` identifies the sentence
/// being translated: an example block whose `[zh]:` line is a different
/// sentence is exempt.
pub fn find_leaks(text: &str, reference: &str, own_source: &str) -> Vec<String> {
    let mut leaks = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        if lines[i] == ANALYZE_LINE && i + 3 < lines.len() {
            let zh = lines[i + 1].strip_prefix("[zh]: ").unwrap_or("");
            if zh != own_source {
                i += 4;
                continue;
            }
        }
        if lines[i].contains(reference) {
            leaks.push(lines[i].to_string());
        }
        i += 1;
    }
    leaks
}
