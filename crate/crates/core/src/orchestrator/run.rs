use std::collections::HashMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use crate::corpus::{CorpusSplit, SentenceId, SentencePair};
use crate::llm::transcript::{render_all, Exchange};
use crate::metrics::BleuMode;
use crate::prompting::find_leaks;

use super::{
    nshot_examples, score_records, translate_cot, translate_knn_rpc, translate_lfm,
    translate_nshot, translate_zeroshot, Deps, ExperimentManifest, OrchestratorError, Result,
    RunContext, Status, Strategy, StrategyConfig, StrategyReport, StrategyStats, Translation,
    TranslationRecord,
};

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Concurrent sentences per repetition.
    pub workers: usize,
    /// Let LFM take its test-sentence trial from an earlier CoT row with
    /// the same k, q and seed instead of calling the backend again.
    pub reuse_cot_trials: bool,
    pub bleu_mode: BleuMode,
    /// Recorded in the manifest.
    pub corpus_sha256: String,
    pub split_seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 4,
            reuse_cot_trials: false,
            bleu_mode: BleuMode::Cumulative,
            corpus_sha256: String::new(),
            split_seed: 0,
        }
    }
}

/// A sentence that did not translate cleanly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceStatus {
    pub id: SentenceId,
    pub strategy: String,
    pub run: usize,
    pub status: Status,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Per strategy, per run, per test sentence: trials then the final.
    pub records: Vec<TranslationRecord>,
    pub exchanges: Vec<Exchange>,
    pub reports: Vec<StrategyReport>,
    pub manifest: ExperimentManifest,
    pub problems: Vec<SentenceStatus>,
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set.
fn now_unix() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        })
}

type CotKey = (usize, usize, u64, SentenceId);

/// Runs every configuration `runs` times over the test set and scores it.
/// All configurations are validated before the first backend call.
pub fn run_experiment(
    deps: &Deps,
    split: &CorpusSplit,
    cfgs: &[StrategyConfig],
    opts: &RunOptions,
) -> Result<ExperimentOutput> {
    if cfgs.is_empty() {
        return Err(OrchestratorError::Config("no strategies requested".into()));
    }
    if split.test.is_empty() {
        return Err(OrchestratorError::Data("test set is empty".into()));
    }
    let indexed: Vec<&SentenceId> = deps.index.pairs().map(|p| &p.id).collect();
    let reference: Vec<&SentenceId> = split.reference.iter().map(|p| &p.id).collect();
    if indexed != reference {
        return Err(OrchestratorError::Data(
            "retrieval index was not built from this split's reference set".into(),
        ));
    }
    for cfg in cfgs {
        cfg.validate(split.reference.len())?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| OrchestratorError::Config(format!("worker pool: {e}")))?;

    let started_unix = now_unix();
    let mut records = Vec::new();
    let mut exchanges = Vec::new();
    let mut problems = Vec::new();
    let mut strategies = Vec::with_capacity(cfgs.len());
    let mut cot_results: HashMap<CotKey, String> = HashMap::new();

    for cfg in cfgs {
        let label = cfg.label();
        let mut stats = StrategyStats::default();
        for run in 0..cfg.runs {
            let ctx = RunContext { cfg, run };
            tracing::info!(strategy = %label, run, sentences = split.test.len(), "starting run");
            let shots = (cfg.strategy == Strategy::Nshot).then(|| nshot_examples(&deps.index, ctx));
            let reused = |s: &SentencePair| -> Option<String> {
                if !opts.reuse_cot_trials {
                    return None;
                }
                cot_results
                    .get(&(cfg.k, cfg.q, ctx.seed(), s.id.clone()))
                    .cloned()
            };
            let translations: Vec<Translation> = pool.install(|| {
                split
                    .test
                    .par_iter()
                    .map(|s| match cfg.strategy {
                        Strategy::Zeroshot => translate_zeroshot(deps, s, ctx),
                        Strategy::Nshot => {
                            translate_nshot(deps, s, shots.as_deref().unwrap_or(&[]), ctx)
                        }
                        Strategy::KnnRpc => translate_knn_rpc(deps, s, ctx),
                        Strategy::Cot => translate_cot(deps, s, ctx),
                        Strategy::Lfm => translate_lfm(deps, s, ctx, reused(s).as_deref()),
                    })
                    .collect()
            });
            for t in translations {
                stats.completions += t.completions;
                stats.dropped_trials += t.dropped_trials;
                stats.dropped_neighbors += t.dropped_neighbors;
                stats.backend_failures += t.backend_failures;
                match &t.status {
                    Status::Ok => {}
                    Status::Failed(_) => stats.failures += 1,
                    Status::Degraded(_) => stats.degraded += 1,
                }
                if t.status != Status::Ok {
                    problems.push(SentenceStatus {
                        id: t.record.id.clone(),
                        strategy: label.clone(),
                        run,
                        status: t.status.clone(),
                    });
                }
                if cfg.strategy == Strategy::Cot && t.status == Status::Ok {
                    cot_results.insert(
                        (cfg.k, cfg.q, ctx.seed(), t.record.id.clone()),
                        t.record.hypothesis.clone(),
                    );
                }
                records.extend(t.trials);
                records.push(t.record);
                exchanges.extend(t.exchanges);
            }
        }
        tracing::info!(strategy = %label, completions = stats.completions, failures = stats.failures, "strategy done");
        strategies.push((cfg.clone(), stats));
    }

    let reports = score_records(&records, opts.bleu_mode)?;
    let manifest = ExperimentManifest {
        corpus_sha256: opts.corpus_sha256.clone(),
        split_seed: opts.split_seed,
        test_size: split.test.len(),
        reference_size: split.reference.len(),
        sentence_provider: deps.index.provider().name().to_string(),
        word_provider: deps
            .glosser
            .word_provider_name()
            .unwrap_or("none")
            .to_string(),
        gloss_threshold: deps.glosser.threshold(),
        language: deps.language.name.clone(),
        backend: deps.backend.name().to_string(),
        model: deps.model.clone(),
        temperature: deps.temperature,
        max_output: deps.max_output,
        char_budget: deps.char_budget,
        workers: opts.workers.max(1),
        reuse_cot_trials: opts.reuse_cot_trials,
        bleu_mode: opts.bleu_mode.as_str().to_string(),
        strategies,
        started_unix,
        finished_unix: now_unix(),
        config: Vec::new(),
    };
    Ok(ExperimentOutput {
        records,
        exchanges,
        reports,
        manifest,
        problems,
    })
}

/// A reference translation found in a prompt for its own sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leak {
    pub sentence_id: SentenceId,
    pub strategy: String,
    pub run: usize,
    pub purpose: String,
    pub line: String,
}

/// Checks every message of every exchange for the reference of the sentence
/// it serves: the test sentence, and for trials also the neighbor being
/// translated. Learning-from-mistakes example blocks of other sentences are
/// exempt. `pairs` must cover every id the exchanges mention.
pub fn scan_leaks(exchanges: &[Exchange], pairs: &[SentencePair]) -> Vec<Leak> {
    let by_id: HashMap<&str, &SentencePair> = pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut leaks = Vec::new();
    for ex in exchanges {
        let mut own = vec![ex.sentence_id.as_str()];
        if let Some(n) = ex.purpose.strip_prefix("trial ").filter(|n| *n != "self") {
            own.push(n);
        }
        for id in own {
            let Some(pair) = by_id.get(id) else { continue };
            for m in &ex.messages {
                for line in find_leaks(&m.text, &pair.target, &pair.source) {
                    leaks.push(Leak {
                        sentence_id: pair.id.clone(),
                        strategy: ex.strategy.clone(),
                        run: ex.run,
                        purpose: ex.purpose.clone(),
                        line,
                    });
                }
            }
        }
    }
    leaks
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes one transcript per (sentence, strategy, run) as
/// `<dir>/<strategy>/run-<r>/<id>.txt`; returns the number of files.
pub fn dump_prompts(dir: &Path, exchanges: &[Exchange]) -> Result<usize> {
    let mut groups: Vec<((String, String, usize), Vec<Exchange>)> = Vec::new();
    let mut slot: HashMap<(String, String, usize), usize> = HashMap::new();
    for ex in exchanges {
        let key = (ex.strategy.clone(), ex.sentence_id.to_string(), ex.run);
        let i = *slot.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[i].1.push(ex.clone());
    }
    for ((strategy, id, run), group) in &groups {
        let sub = dir.join(file_safe(strategy)).join(format!("run-{run}"));
        let io = |path: &Path, source| OrchestratorError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(&sub).map_err(|e| io(&sub, e))?;
        let path = sub.join(format!("{}.txt", file_safe(id)));
        std::fs::write(&path, render_all(group)).map_err(|e| io(&path, e))?;
    }
    Ok(groups.len())
}
