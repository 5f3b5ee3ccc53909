use super::{OrchestratorError, Result, StrategyConfig};

/// Per-strategy counters summed over runs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StrategyStats {
    pub completions: usize,
    pub failures: usize,
    pub degraded: usize,
    pub dropped_trials: usize,
    pub dropped_neighbors: usize,
    pub backend_failures: usize,
}

/// Everything needed to re-run an experiment, as `key: value` lines.
///
/// `strategy.N` holds `<label> runs=R seed=S`; `stats.N` holds the
/// counters for the same strategy. Free-form `config.*` keys echo the
/// effective configuration the caller used.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentManifest {
    pub corpus_sha256: String,
    pub split_seed: u64,
    pub test_size: usize,
    pub reference_size: usize,
    pub sentence_provider: String,
    pub word_provider: String,
    pub gloss_threshold: f64,
    pub language: String,
    pub backend: String,
    pub model: String,
    pub temperature: f64,
    pub max_output: u32,
    pub char_budget: usize,
    pub workers: usize,
    pub reuse_cot_trials: bool,
    pub bleu_mode: String,
    pub strategies: Vec<(StrategyConfig, StrategyStats)>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub config: Vec<(String, String)>,
}

pub const MANIFEST_HEADER: &str = "# ilmt experiment manifest v1";

impl ExperimentManifest {
    pub fn render(&self) -> String {
        let mut lines = vec![MANIFEST_HEADER.to_string()];
        let mut kv = |k: &str, v: String| lines.push(format!("{k}: {v}"));
        kv("corpus-sha256", self.corpus_sha256.clone());
        kv("split-seed", self.split_seed.to_string());
        kv("test-size", self.test_size.to_string());
        kv("reference-size", self.reference_size.to_string());
        kv("sentence-provider", self.sentence_provider.clone());
        kv("word-provider", self.word_provider.clone());
        kv("gloss-threshold", format!("{:?}", self.gloss_threshold));
        kv("language", self.language.clone());
        kv("backend", self.backend.clone());
        kv("model", self.model.clone());
        kv("temperature", format!("{:?}", self.temperature));
        kv("max-output", self.max_output.to_string());
        kv("char-budget", self.char_budget.to_string());
        kv("workers", self.workers.to_string());
        kv("reuse-cot-trials", self.reuse_cot_trials.to_string());
        kv("bleu-mode", self.bleu_mode.clone());
        kv("std", "population".into());
        kv(
            "lfm-trial-sentences",
            "q nearest neighbors, same as CoT demonstrations".into(),
        );
        kv("failed-sentences", "scored as empty hypotheses".into());
        for (i, (cfg, stats)) in self.strategies.iter().enumerate() {
            kv(
                &format!("strategy.{i}"),
                format!("{} runs={} seed={}", cfg.label(), cfg.runs, cfg.seed),
            );
            kv(
                &format!("stats.{i}"),
                format!(
                    "completions={} failures={} degraded={} dropped-trials={} dropped-neighbors={} backend-failures={}",
                    stats.completions,
                    stats.failures,
                    stats.degraded,
                    stats.dropped_trials,
                    stats.dropped_neighbors,
                    stats.backend_failures
                ),
            );
        }
        kv("started-unix", self.started_unix.to_string());
        kv("finished-unix", self.finished_unix.to_string());
        for (k, v) in &self.config {
            kv(&format!("config.{k}"), v.replace('\n', " "));
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = ExperimentManifest::default();
        let mut strategies: Vec<Option<StrategyConfig>> = Vec::new();
        let mut stats: Vec<Option<StrategyStats>> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| OrchestratorError::Manifest {
                line: idx + 1,
                reason,
            };
            let (key, value) = line
                .split_once(": ")
                .ok_or_else(|| err("expected `key: value`".into()))?;
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| err(format!("{key}: `{v}` is not a number")))
            };
            let float = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| err(format!("{key}: `{v}` is not a number")))
            };
            match key {
                "corpus-sha256" => m.corpus_sha256 = value.into(),
                "split-seed" => m.split_seed = num(value)?,
                "test-size" => m.test_size = num(value)? as usize,
                "reference-size" => m.reference_size = num(value)? as usize,
                "sentence-provider" => m.sentence_provider = value.into(),
                "word-provider" => m.word_provider = value.into(),
                "gloss-threshold" => m.gloss_threshold = float(value)?,
                "language" => m.language = value.into(),
                "backend" => m.backend = value.into(),
                "model" => m.model = value.into(),
                "temperature" => m.temperature = float(value)?,
                "max-output" => m.max_output = num(value)? as u32,
                "char-budget" => m.char_budget = num(value)? as usize,
                "workers" => m.workers = num(value)? as usize,
                "reuse-cot-trials" => m.reuse_cot_trials = value == "true",
                "bleu-mode" => m.bleu_mode = value.into(),
                "started-unix" => m.started_unix = num(value)?,
                "finished-unix" => m.finished_unix = num(value)?,
                "std" | "lfm-trial-sentences" | "failed-sentences" => {}
                _ => {
                    if let Some(i) = key.strip_prefix("strategy.") {
                        let i = num(i)? as usize;
                        let mut parts = value.split(' ');
                        let mut cfg = StrategyConfig::parse_label(parts.next().unwrap_or(""))
                            .map_err(|e| err(e.to_string()))?;
                        for p in parts {
                            match p.split_once('=') {
                                Some(("runs", v)) => cfg.runs = num(v)? as usize,
                                Some(("seed", v)) => cfg.seed = num(v)?,
                                _ => return Err(err(format!("unexpected `{p}`"))),
                            }
                        }
                        put(&mut strategies, i, cfg);
                    } else if let Some(i) = key.strip_prefix("stats.") {
                        let i = num(i)? as usize;
                        let mut s = StrategyStats::default();
                        for p in value.split(' ') {
                            let (k, v) = p
                                .split_once('=')
                                .ok_or_else(|| err(format!("unexpected `{p}`")))?;
                            let v = num(v)? as usize;
                            match k {
                                "completions" => s.completions = v,
                                "failures" => s.failures = v,
                                "degraded" => s.degraded = v,
                                "dropped-trials" => s.dropped_trials = v,
                                "dropped-neighbors" => s.dropped_neighbors = v,
                                "backend-failures" => s.backend_failures = v,
                                _ => return Err(err(format!("unknown counter `{k}`"))),
                            }
                        }
                        put(&mut stats, i, s);
                    } else if let Some(k) = key.strip_prefix("config.") {
                        m.config.push((k.to_string(), value.to_string()));
                    } else {
                        return Err(err(format!("unknown key `{key}`")));
                    }
                }
            }
        }
        for (i, cfg) in strategies.into_iter().enumerate() {
            let cfg = cfg.ok_or_else(|| OrchestratorError::Manifest {
                line: 0,
                reason: format!("strategy.{i} missing"),
            })?;
            let s = stats.get(i).cloned().flatten().unwrap_or_default();
            m.strategies.push((cfg, s));
        }
        Ok(m)
    }
}

fn put<T>(v: &mut Vec<Option<T>>, i: usize, item: T) {
    if v.len() <= i {
        v.resize_with(i + 1, || None);
    }
    v[i] = Some(item);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::Strategy;

    #[test]
    fn round_trip() {
        let mut lfm = StrategyConfig::new(Strategy::Lfm);
        lfm.seed = 42;
        let m = ExperimentManifest {
            corpus_sha256: "ab".repeat(32),
            split_seed: 7,
            test_size: 100,
            reference_size: 350,
            sentence_provider: "hash-ngram-fnv1a:dim=256:n=1-3:sentence".into(),
            word_provider: "none".into(),
            gloss_threshold: 0.6,
            language: "Amis".into(),
            backend: "mock-gloss".into(),
            model: "gpt-3.5-turbo-16k-0613".into(),
            temperature: 0.0,
            max_output: 512,
            char_budget: 48_000,
            workers: 4,
            reuse_cot_trials: false,
            bleu_mode: "cumulative".into(),
            strategies: vec![
                (
                    StrategyConfig::new(Strategy::KnnRpc),
                    StrategyStats::default(),
                ),
                (
                    lfm,
                    StrategyStats {
                        completions: 1200,
                        failures: 1,
                        degraded: 2,
                        dropped_trials: 3,
                        dropped_neighbors: 4,
                        backend_failures: 5,
                    },
                ),
            ],
            started_unix: 1,
            finished_unix: 2,
            config: vec![("corpus".into(), "data/amis.tsv".into())],
        };
        let text = m.render();
        assert!(text.contains("strategy.1: lfm:k=5,q=2 runs=3 seed=42\n"));
        assert_eq!(ExperimentManifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(ExperimentManifest::parse("colour: blue\n").is_err());
        assert!(ExperimentManifest::parse("split-seed: x\n").is_err());
    }
}
