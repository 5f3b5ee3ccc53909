//! Layered settings: command-line flags, then the `--config` TOML file, then
//! `ILMT_*` environment variables, then built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

/// Keys accepted in the `--config` file. Every key is optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub fixture: Option<PathBuf>,
    pub dump_prompts: Option<PathBuf>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub endpoint: Option<String>,
    pub language: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub test_size: Option<usize>,
    pub strategies: Option<Vec<String>>,
    pub k: Option<usize>,
    pub q: Option<usize>,
    pub n_shots: Option<usize>,
    pub runs: Option<usize>,
    pub reuse_cot_trials: Option<bool>,
    pub char_budget: Option<usize>,
    pub gloss_threshold: Option<f64>,
    pub sentence_embeddings: Option<String>,
    pub word_embeddings: Option<String>,
    pub requests_per_minute: Option<u32>,
    pub bleu_mode: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Reads `ILMT_<NAME>`; empty values count as unset.
pub fn env(name: &str) -> Option<String> {
    std::env::var(format!("ILMT_{name}"))
        .ok()
        .filter(|v| !v.trim().is_empty())
}

pub fn env_parsed<T: std::str::FromStr>(name: &str) -> Result<Option<T>, CliError> {
    match env(name) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("ILMT_{name}: cannot parse `{v}`"))),
    }
}

/// First of flag, file and environment that is set.
pub fn pick<T>(flag: Option<T>, file: Option<T>, env: Option<T>) -> Option<T> {
    flag.or(file).or(env)
}

pub fn require<T>(value: Option<T>, what: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("missing {what} (flag or config file)")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BackendKind {
    Live,
    MockReplay,
    MockGloss,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Live => "live",
            BackendKind::MockReplay => "mock-replay",
            BackendKind::MockGloss => "mock-gloss",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "live" => Ok(BackendKind::Live),
            "mock-replay" => Ok(BackendKind::MockReplay),
            "mock-gloss" => Ok(BackendKind::MockGloss),
            _ => Err(CliError::Config(format!(
                "unknown backend `{s}` (live, mock-replay, mock-gloss)"
            ))),
        }
    }
}
