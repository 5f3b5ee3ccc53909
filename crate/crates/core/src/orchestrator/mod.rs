//! Experiment execution: strategies, per-sentence translation, the two-phase
//! learning-from-mistakes procedure, records, reports and manifests.

mod manifest;
mod records;
mod report;
mod run;

use std::fmt;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use manifest::{ExperimentManifest, StrategyStats};
pub use records::{parse_records, render_records, Phase, TranslationRecord, RECORDS_HEADER};
pub use report::{
    display_names, parse_csv, render_csv, render_table, score_records, StrategyReport,
};
pub use run::{
    dump_prompts, run_experiment, scan_leaks, ExperimentOutput, Leak, RunOptions, SentenceStatus,
};

use crate::corpus::{SentenceId, SentencePair};
use crate::embedding::fnv1a64;
use crate::llm::transcript::{Exchange, Outcome};
use crate::llm::{complete, Backend, CompletionRequest, LlmError, DEFAULT_MODEL};
use crate::prompting::{
    fit_to_budget, render_cot, render_knn_rpc, render_lfm_refine, render_nshot, render_zeroshot,
    CotDemonstration, Language, LfmExample, PromptError, PromptScript, DEFAULT_CHAR_BUDGET,
};
use crate::retrieval::{build_rpc_with, Glosser, KnnOptions, RetrievalError, RetrievalIndex};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("records line {line}: {reason}")]
    Records { line: usize, reason: String },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = OrchestratorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Zeroshot,
    Nshot,
    KnnRpc,
    Cot,
    Lfm,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Zeroshot => "zeroshot",
            Strategy::Nshot => "nshot",
            Strategy::KnnRpc => "knn_rpc",
            Strategy::Cot => "cot",
            Strategy::Lfm => "lfm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zeroshot" => Some(Strategy::Zeroshot),
            "nshot" => Some(Strategy::Nshot),
            "knn_rpc" => Some(Strategy::KnnRpc),
            "cot" => Some(Strategy::Cot),
            "lfm" => Some(Strategy::Lfm),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of an experiment. Parameters a strategy does not use are kept but
/// left out of its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub q: usize,
    pub n_shots: usize,
    pub runs: usize,
    pub seed: u64,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            k: 5,
            q: 2,
            n_shots: 20,
            runs: 3,
            seed: 0,
        }
    }

    /// `zeroshot`, `nshot:n=20`, `knn_rpc:k=5`, `cot:k=5,q=2`, `lfm:k=5,q=2`.
    pub fn label(&self) -> String {
        match self.strategy {
            Strategy::Zeroshot => "zeroshot".into(),
            Strategy::Nshot => format!("nshot:n={}", self.n_shots),
            Strategy::KnnRpc => format!("knn_rpc:k={}", self.k),
            Strategy::Cot => format!("cot:k={},q={}", self.k, self.q),
            Strategy::Lfm => format!("lfm:k={},q={}", self.k, self.q),
        }
    }

    /// Inverse of [`label`](Self::label); `runs` and `seed` take defaults.
    pub fn parse_label(label: &str) -> Result<Self> {
        let bad = |why: &str| OrchestratorError::Config(format!("strategy label `{label}`: {why}"));
        let (name, params) = label.split_once(':').unwrap_or((label, ""));
        let strategy = Strategy::parse(name).ok_or_else(|| bad("unknown strategy"))?;
        let mut cfg = Self::new(strategy);
        for kv in params.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| bad("expected key=value"))?;
            let value: usize = value.parse().map_err(|_| bad("value is not a count"))?;
            match key {
                "k" => cfg.k = value,
                "q" => cfg.q = value,
                "n" => cfg.n_shots = value,
                _ => return Err(bad("unknown parameter")),
            }
        }
        if cfg.label() != label {
            return Err(bad("not in canonical form"));
        }
        Ok(cfg)
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }

    /// Checks parameters against the reference set size. CoT needs `q`
    /// demonstrations; LFM trial translations also need `q` once their own
    /// pair is set aside.
    pub fn validate(&self, reference_size: usize) -> Result<()> {
        let label = self.label();
        let fail = |why: String| Err(OrchestratorError::Config(format!("{label}: {why}")));
        if self.runs == 0 {
            return fail("runs must be at least 1".into());
        }
        match self.strategy {
            Strategy::Zeroshot => {}
            Strategy::Nshot => {
                if self.n_shots == 0 {
                    return fail("n_shots must be at least 1".into());
                }
                if self.n_shots > reference_size {
                    return fail(format!(
                        "n_shots {} exceeds the {reference_size} reference pairs",
                        self.n_shots
                    ));
                }
            }
            Strategy::KnnRpc | Strategy::Cot | Strategy::Lfm => {
                if self.k == 0 {
                    return fail("k must be at least 1".into());
                }
                if reference_size == 0 {
                    return fail("reference set is empty".into());
                }
            }
        }
        let need = match self.strategy {
            Strategy::Cot => Some(self.q),
            Strategy::Lfm => Some(self.q + 1),
            _ => None,
        };
        if let Some(need) = need {
            if self.q == 0 {
                return fail("q must be at least 1".into());
            }
            if reference_size < need {
                return fail(format!(
                    "needs at least {need} reference pairs, found {reference_size}"
                ));
            }
        }
        Ok(())
    }
}

/// Read-only collaborators shared by every worker.
pub struct Deps {
    pub index: Arc<RetrievalIndex>,
    pub glosser: Arc<Glosser>,
    pub backend: Arc<dyn Backend>,
    pub language: Language,
    pub model: String,
    pub temperature: f64,
    pub max_output: u32,
    pub char_budget: usize,
}

impl Deps {
    pub fn new(
        index: Arc<RetrievalIndex>,
        glosser: Arc<Glosser>,
        backend: Arc<dyn Backend>,
        language: Language,
    ) -> Self {
        Self {
            index,
            glosser,
            backend,
            language,
            model: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            max_output: 512,
            char_budget: DEFAULT_CHAR_BUDGET,
        }
    }
}

/// Which repetition of which configuration is executing.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub cfg: &'a StrategyConfig,
    pub run: usize,
}

impl RunContext<'_> {
    pub fn seed(&self) -> u64 {
        self.cfg.run_seed(self.run)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Scored as an empty hypothesis.
    Failed(String),
    /// LFM fell back to its CoT trial.
    Degraded(String),
}

/// Everything produced while translating one test sentence.
#[derive(Debug, Clone)]
pub struct Translation {
    pub record: TranslationRecord,
    pub trials: Vec<TranslationRecord>,
    pub exchanges: Vec<Exchange>,
    pub status: Status,
    pub completions: usize,
    pub dropped_neighbors: usize,
    pub dropped_trials: usize,
    /// Calls that failed in the backend itself, as opposed to unusable output.
    pub backend_failures: usize,
}

impl Translation {
    fn new(sentence: &SentencePair, ctx: RunContext<'_>) -> Self {
        Self {
            record: TranslationRecord {
                id: sentence.id.clone(),
                strategy: ctx.cfg.label(),
                run: ctx.run,
                phase: Phase::Final,
                source: sentence.source.clone(),
                reference: sentence.target.clone(),
                hypothesis: String::new(),
            },
            trials: Vec::new(),
            exchanges: Vec::new(),
            status: Status::Ok,
            completions: 0,
            dropped_neighbors: 0,
            dropped_trials: 0,
            backend_failures: 0,
        }
    }

    fn finish(mut self, result: std::result::Result<String, String>) -> Self {
        match result {
            Ok(h) => self.record.hypothesis = h,
            Err(e) => {
                tracing::warn!(id = %self.record.id, strategy = %self.record.strategy, error = %e, "sentence failed");
                self.status = Status::Failed(e);
            }
        }
        self
    }
}

/// Labels attached to one backend call in the transcript.
struct CallSite<'a> {
    sentence: &'a SentenceId,
    ctx: RunContext<'a>,
    phase: Phase,
    purpose: String,
}

/// Sends one script; every call leaves an exchange in `t`.
fn call(
    deps: &Deps,
    t: &mut Translation,
    site: &CallSite<'_>,
    script: std::result::Result<PromptScript, String>,
) -> std::result::Result<String, String> {
    let label = site.ctx.cfg.label();
    let exchange = |script: &PromptScript, outcome| {
        Exchange::new(
            site.sentence.clone(),
            &label,
            site.ctx.run,
            site.phase.as_str(),
            site.purpose.clone(),
            script,
            outcome,
        )
    };
    let script = match script {
        Ok(s) => s.with_source_id(site.sentence.clone()),
        Err(e) => {
            let mut ex = exchange(&empty_script(), Outcome::Error(e.clone()));
            ex.prompt_sha256.clear();
            t.exchanges.push(ex);
            return Err(e);
        }
    };
    let mut request = CompletionRequest::new(script, deps.model.clone());
    request.temperature = deps.temperature;
    request.max_output = deps.max_output;
    t.completions += 1;
    match complete(deps.backend.as_ref(), &request) {
        Ok(result) => {
            t.exchanges.push(exchange(
                &request.script,
                Outcome::Response(result.raw_text),
            ));
            Ok(result.extracted)
        }
        Err(LlmError::Extraction { raw_text }) => {
            t.exchanges
                .push(exchange(&request.script, Outcome::Response(raw_text)));
            Err("no translation found in model output".into())
        }
        Err(e) => {
            t.backend_failures += 1;
            t.exchanges
                .push(exchange(&request.script, Outcome::Error(e.to_string())));
            Err(e.to_string())
        }
    }
}

fn empty_script() -> PromptScript {
    PromptScript {
        messages: Vec::new(),
        kind: crate::prompting::PromptKind::Zeroshot,
        meta: Default::default(),
    }
}

fn retrieval_msg(e: RetrievalError) -> String {
    format!("retrieval failed: {e}")
}

fn prompt_msg(e: PromptError) -> String {
    format!("prompt rendering failed: {e}")
}

pub fn translate_zeroshot(
    deps: &Deps,
    sentence: &SentencePair,
    ctx: RunContext<'_>,
) -> Translation {
    let mut t = Translation::new(sentence, ctx);
    let script = render_zeroshot(&sentence.source, &deps.language);
    let site = CallSite {
        sentence: &sentence.id,
        ctx,
        phase: Phase::Final,
        purpose: "final".into(),
    };
    let result = call(deps, &mut t, &site, Ok(script));
    t.finish(result)
}

/// The shots for one repetition: `n_shots` reference pairs drawn with the
/// run seed, identical for every sentence in that repetition.
pub fn nshot_examples(index: &RetrievalIndex, ctx: RunContext<'_>) -> Vec<SentencePair> {
    let pairs: Vec<&SentencePair> = index.pairs().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
    pairs
        .choose_multiple(&mut rng, ctx.cfg.n_shots.min(pairs.len()))
        .map(|p| (*p).clone())
        .collect()
}

pub fn translate_nshot(
    deps: &Deps,
    sentence: &SentencePair,
    shots: &[SentencePair],
    ctx: RunContext<'_>,
) -> Translation {
    let mut t = Translation::new(sentence, ctx);
    let script = render_nshot(&sentence.source, shots, &deps.language).map_err(prompt_msg);
    let site = CallSite {
        sentence: &sentence.id,
        ctx,
        phase: Phase::Final,
        purpose: "final".into(),
    };
    let result = call(deps, &mut t, &site, script);
    t.finish(result)
}

/// Trial queries (non-empty `exclude`) also drop pairs sharing their source.
fn query_opts(exclude: &[SentenceId], ctx: RunContext<'_>) -> KnnOptions {
    KnnOptions {
        exclude_ids: exclude.to_vec(),
        exclude_exact_match: !exclude.is_empty(),
        tie_seed: Some(ctx.seed()),
    }
}

pub fn translate_knn_rpc(deps: &Deps, sentence: &SentencePair, ctx: RunContext<'_>) -> Translation {
    let mut t = Translation::new(sentence, ctx);
    let script = build_rpc_with(
        &deps.index,
        &deps.glosser,
        &sentence.source,
        ctx.cfg.k,
        &query_opts(&[], ctx),
    )
    .map_err(retrieval_msg)
    .and_then(|rpc| {
        fit_to_budget(&rpc, &[], deps.char_budget, |q, _| {
            Ok(render_knn_rpc(q, &deps.language))
        })
        .map_err(prompt_msg)
    })
    .map(|(s, dropped)| {
        t.dropped_neighbors += dropped;
        s
    });
    let site = CallSite {
        sentence: &sentence.id,
        ctx,
        phase: Phase::Final,
        purpose: "final".into(),
    };
    let result = call(deps, &mut t, &site, script);
    t.finish(result)
}

/// The `q` nearest reference pairs of `source`, skipping `exclude` and any
/// pair with the same source text.
pub fn select_demonstrations(
    index: &RetrievalIndex,
    source: &str,
    q: usize,
    exclude: &[SentenceId],
    ctx: RunContext<'_>,
) -> Result<Vec<SentencePair>, RetrievalError> {
    let opts = KnnOptions {
        exclude_ids: exclude.to_vec(),
        exclude_exact_match: true,
        tie_seed: Some(ctx.seed()),
    };
    Ok(index
        .knn_with(source, q, &opts)?
        .into_iter()
        .map(|n| n.pair)
        .collect())
}

/// Builds a CoT script for `query` with `exclude` removed from every
/// retrieval. Demonstrations come in a run-seeded order.
pub fn build_cot_script(
    deps: &Deps,
    query: &SentencePair,
    exclude: &[SentenceId],
    ctx: RunContext<'_>,
) -> std::result::Result<(PromptScript, usize), String> {
    let cfg = ctx.cfg;
    let rpc = build_rpc_with(
        &deps.index,
        &deps.glosser,
        &query.source,
        cfg.k,
        &query_opts(exclude, ctx),
    )
    .map_err(retrieval_msg)?;
    let mut samples = select_demonstrations(&deps.index, &query.source, cfg.q, exclude, ctx)
        .map_err(retrieval_msg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed() ^ fnv1a64(query.id.as_str().as_bytes()));
    samples.shuffle(&mut rng);
    let mut demos = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut demo_exclude = exclude.to_vec();
        demo_exclude.push(sample.id.clone());
        let opts = KnnOptions {
            exclude_ids: demo_exclude,
            exclude_exact_match: true,
            tie_seed: Some(ctx.seed()),
        };
        let demo_rpc = build_rpc_with(&deps.index, &deps.glosser, &sample.source, cfg.k, &opts)
            .map_err(retrieval_msg)?;
        demos.push(CotDemonstration {
            sample,
            rpc: demo_rpc,
        });
    }
    fit_to_budget(&rpc, &demos, deps.char_budget, |q, d| {
        render_cot(q, d, &deps.language)
    })
    .map_err(prompt_msg)
}

fn cot_call(
    deps: &Deps,
    t: &mut Translation,
    query: &SentencePair,
    exclude: &[SentenceId],
    site: &CallSite<'_>,
) -> std::result::Result<String, String> {
    let script = build_cot_script(deps, query, exclude, site.ctx).map(|(s, dropped)| {
        t.dropped_neighbors += dropped;
        s
    });
    call(deps, t, site, script)
}

pub fn translate_cot(deps: &Deps, sentence: &SentencePair, ctx: RunContext<'_>) -> Translation {
    let mut t = Translation::new(sentence, ctx);
    let site = CallSite {
        sentence: &sentence.id,
        ctx,
        phase: Phase::Final,
        purpose: "final".into(),
    };
    let result = cot_call(deps, &mut t, sentence, &[], &site);
    t.finish(result)
}

/// Two-phase learning from mistakes.
///
/// Phase 1 translates the `q` nearest reference pairs with CoT (each with
/// itself excluded from retrieval) and the test sentence with CoT. Phase 2
/// shows the model those trials next to their references and asks it to
/// revise the test sentence's trial. Failed trials are dropped from the
/// examples. If every neighbor trial fails, or the revision fails, the CoT
/// trial is returned with [`Status::Degraded`]. `reuse_trial` supplies the
/// test sentence's CoT hypothesis from an earlier CoT run with the same
/// parameters, saving one call.
pub fn translate_lfm(
    deps: &Deps,
    sentence: &SentencePair,
    ctx: RunContext<'_>,
    reuse_trial: Option<&str>,
) -> Translation {
    let mut t = Translation::new(sentence, ctx);
    let neighbors = match select_demonstrations(&deps.index, &sentence.source, ctx.cfg.q, &[], ctx)
    {
        Ok(n) => n,
        Err(e) => {
            let site = CallSite {
                sentence: &sentence.id,
                ctx,
                phase: Phase::Final,
                purpose: "final".into(),
            };
            let result = call(deps, &mut t, &site, Err(retrieval_msg(e)));
            return t.finish(result);
        }
    };

    let mut examples = Vec::new();
    for n in &neighbors {
        let site = CallSite {
            sentence: &sentence.id,
            ctx,
            phase: Phase::Trial,
            purpose: format!("trial {}", n.id),
        };
        let result = cot_call(deps, &mut t, n, std::slice::from_ref(&n.id), &site);
        let hypothesis = match result {
            Ok(h) => h,
            Err(e) => {
                tracing::warn!(id = %sentence.id, neighbor = %n.id, error = %e, "trial dropped");
                t.dropped_trials += 1;
                String::new()
            }
        };
        t.trials.push(TranslationRecord {
            id: SentenceId::new(format!("{}/{}", sentence.id, n.id)),
            strategy: ctx.cfg.label(),
            run: ctx.run,
            phase: Phase::Trial,
            source: n.source.clone(),
            reference: n.target.clone(),
            hypothesis: hypothesis.clone(),
        });
        if !hypothesis.is_empty() {
            examples.push(LfmExample {
                id: n.id.clone(),
                source: n.source.clone(),
                reference: n.target.clone(),
                hypothesis,
            });
        }
    }

    let trial = match reuse_trial {
        Some(h) if !h.is_empty() => Ok(h.to_string()),
        Some(_) => Err("reused CoT trial is empty".to_string()),
        None => {
            let site = CallSite {
                sentence: &sentence.id,
                ctx,
                phase: Phase::Trial,
                purpose: "trial self".into(),
            };
            cot_call(deps, &mut t, sentence, &[], &site)
        }
    };
    let mut self_trial = t.record.clone();
    self_trial.phase = Phase::Trial;
    self_trial.hypothesis = trial.clone().unwrap_or_default();
    t.trials.push(self_trial);

    let trial = match trial {
        Ok(h) => h,
        Err(e) => return t.finish(Err(format!("CoT trial failed: {e}"))),
    };
    if examples.is_empty() {
        t.record.hypothesis = trial;
        t.status = Status::Degraded("every neighbor trial failed".into());
        return t;
    }

    let site = CallSite {
        sentence: &sentence.id,
        ctx,
        phase: Phase::Final,
        purpose: "refine".into(),
    };
    let script = build_rpc_with(
        &deps.index,
        &deps.glosser,
        &sentence.source,
        ctx.cfg.k,
        &query_opts(&[], ctx),
    )
    .map_err(retrieval_msg)
    .and_then(|rpc| {
        fit_to_budget(&rpc, &[], deps.char_budget, |q, _| {
            render_lfm_refine(&examples, q, &trial, &deps.language)
        })
        .map_err(prompt_msg)
    })
    .map(|(s, dropped)| {
        t.dropped_neighbors += dropped;
        s
    });
    match call(deps, &mut t, &site, script) {
        Ok(h) => t.record.hypothesis = h,
        Err(e) => {
            tracing::warn!(id = %sentence.id, error = %e, "refinement failed, keeping CoT trial");
            t.record.hypothesis = trial;
            t.status = Status::Degraded(format!("refinement failed: {e}"));
        }
    }
    t
}
