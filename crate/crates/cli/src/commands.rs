use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use ilmt::corpus::{
    corpus_hash, load_corpus, load_lexicon, split_corpus, CorpusError, CorpusFormat, CorpusSplit,
    SentencePair, SplitManifest,
};
use ilmt::embedding::{
    EmbeddingError, EmbeddingKind, EmbeddingProvider, HashingProvider, RemoteProvider,
    TableProvider,
};
use ilmt::http::{JsonClient, UreqTransport};
use ilmt::llm::{
    Backend, Fixture, GlossEchoBackend, LiveBackend, LiveConfig, LlmError, ReplayBackend,
    API_KEY_ENV, DEFAULT_MODEL,
};
use ilmt::metrics::BleuMode;
use ilmt::orchestrator::{
    dump_prompts, parse_csv, parse_records, render_csv, render_records, render_table,
    run_experiment, score_records, Deps, OrchestratorError, RunOptions, Strategy, StrategyConfig,
};
use ilmt::prompting::{Language, DEFAULT_CHAR_BUDGET};
use ilmt::retrieval::{Glosser, RetrievalError, RetrievalIndex};

use crate::config::{env, env_parsed, pick, require, BackendKind};
use crate::{CliError, EvaluateArgs, Global, IndexArgs, ReportArgs, SplitArgs, TranslateArgs};

const EMBEDDING_ENDPOINT_ENV: &str = "ILMT_EMBEDDING_ENDPOINT";
const DEFAULT_EMBEDDING_BASE: &str = "https://api.openai.com/v1";

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<OrchestratorError> for CliError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::Config(m) => CliError::Config(m),
            OrchestratorError::Io { .. } => CliError::Other(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match &e {
            RetrievalError::Embedding {
                source: EmbeddingError::Http(_),
                ..
            } => CliError::Backend(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::MissingCredential(_) | LlmError::InvalidRequest(_) => {
                CliError::Config(e.to_string())
            }
            LlmError::Fixture { .. } => CliError::Data(e.to_string()),
            other => CliError::Backend(other.to_string()),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn seed(g: &Global) -> Result<u64, CliError> {
    Ok(pick(g.seed, g.file.seed, env_parsed("SEED")?).unwrap_or(0))
}

pub fn split(g: &Global, args: SplitArgs) -> Result<(), CliError> {
    let corpus_path = require(pick(args.corpus, g.file.corpus.clone(), None), "--corpus")?;
    let test_size = require(pick(args.test_size, g.file.test_size, None), "--test-size")?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("split.manifest"));
    let seed = seed(g)?;
    let corpus = load_corpus(&corpus_path, CorpusFormat::Auto)?;
    let split = split_corpus(&corpus, test_size, seed)?;
    write(&out, &SplitManifest::from_split(&split, &corpus).render())?;
    println!(
        "test {} reference {} seed {seed} -> {}",
        split.test.len(),
        split.reference.len(),
        out.display()
    );
    Ok(())
}

fn load_split(
    g: &Global,
    corpus: Option<PathBuf>,
    split: Option<PathBuf>,
) -> Result<(Vec<SentencePair>, SplitManifest, CorpusSplit), CliError> {
    let corpus_path = require(pick(corpus, g.file.corpus.clone(), None), "--corpus")?;
    let split_path = require(pick(split, g.file.split.clone(), None), "--split")?;
    let corpus = load_corpus(&corpus_path, CorpusFormat::Auto)?;
    let manifest = SplitManifest::parse(&read(&split_path)?)?;
    let split = manifest.resolve(&corpus)?;
    Ok((corpus, manifest, split))
}

/// `hash`, `none`, `table:PATH` or `remote:MODEL:DIM`.
fn provider(
    spec: &str,
    kind: EmbeddingKind,
) -> Result<Option<Arc<dyn EmbeddingProvider>>, CliError> {
    if spec == "none" {
        return Ok(None);
    }
    if spec == "hash" {
        let p = match kind {
            EmbeddingKind::Sentence => HashingProvider::sentence(),
            EmbeddingKind::Word => HashingProvider::word(),
        };
        return Ok(Some(Arc::new(p)));
    }
    if let Some(path) = spec.strip_prefix("table:") {
        let p =
            TableProvider::load(path, kind).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
        return Ok(Some(Arc::new(p)));
    }
    if let Some(rest) = spec.strip_prefix("remote:") {
        let (model, dim) = rest
            .rsplit_once(':')
            .and_then(|(m, d)| Some((m, d.parse::<usize>().ok()?)))
            .ok_or_else(|| {
                CliError::Config(format!(
                    "embedding source `{spec}`: expected remote:MODEL:DIM"
                ))
            })?;
        let base =
            std::env::var(EMBEDDING_ENDPOINT_ENV).unwrap_or_else(|_| DEFAULT_EMBEDDING_BASE.into());
        let token = std::env::var(API_KEY_ENV).ok();
        let client = JsonClient::new(Box::new(UreqTransport::new(Duration::from_secs(60))));
        return Ok(Some(Arc::new(RemoteProvider::new(
            &base, model, token, dim, kind, client,
        ))));
    }
    Err(CliError::Config(format!(
        "embedding source `{spec}`: expected hash, none, table:PATH or remote:MODEL:DIM"
    )))
}

fn sentence_provider(
    g: &Global,
    flag: Option<String>,
) -> Result<(String, Arc<dyn EmbeddingProvider>), CliError> {
    let spec = pick(
        flag,
        g.file.sentence_embeddings.clone(),
        env("SENTENCE_EMBEDDINGS"),
    )
    .unwrap_or_else(|| "hash".into());
    let p = provider(&spec, EmbeddingKind::Sentence)?
        .ok_or_else(|| CliError::Config("sentence embeddings cannot be `none`".into()))?;
    Ok((spec, p))
}

pub fn index(g: &Global, args: IndexArgs) -> Result<(), CliError> {
    let (_, _, split) = load_split(g, args.corpus, args.split)?;
    let (_, provider) = sentence_provider(g, args.sentence_embeddings)?;
    let out =
        pick(args.out, g.file.index.clone(), None).unwrap_or_else(|| PathBuf::from("index.tsv"));
    let index = RetrievalIndex::build(&split.reference, provider)?;
    write(&out, &index.render_cache())?;
    println!(
        "indexed {} reference pairs -> {}",
        index.len(),
        out.display()
    );
    Ok(())
}

fn bleu_mode(flag: Option<String>, file: Option<String>) -> Result<BleuMode, CliError> {
    match pick(flag, file, env("BLEU_MODE")).as_deref() {
        None | Some("cumulative") => Ok(BleuMode::Cumulative),
        Some("order-only") => Ok(BleuMode::OrderOnly),
        Some(other) => Err(CliError::Config(format!(
            "unknown BLEU mode `{other}` (cumulative, order-only)"
        ))),
    }
}

/// Expands `--strategy` values: bare names take the shared parameters, full
/// labels keep their own.
fn strategy_configs(
    names: &[String],
    k: usize,
    q: usize,
    n_shots: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<StrategyConfig>, CliError> {
    if names.is_empty() {
        return Err(CliError::Config("no --strategy given".into()));
    }
    names
        .iter()
        .map(|name| {
            let mut cfg = match Strategy::parse(name) {
                Some(s) => {
                    let mut c = StrategyConfig::new(s);
                    c.k = k;
                    c.q = q;
                    c.n_shots = n_shots;
                    c
                }
                None => StrategyConfig::parse_label(name)?,
            };
            cfg.runs = runs;
            cfg.seed = seed;
            Ok(cfg)
        })
        .collect()
}

pub fn translate(g: &Global, args: TranslateArgs) -> Result<(), CliError> {
    let f = &g.file;
    let seed = seed(g)?;
    let workers = pick(g.workers, f.workers, env_parsed("WORKERS")?).unwrap_or(4);
    let backend_kind = match (g.backend, &f.backend, env("BACKEND")) {
        (Some(b), _, _) => b,
        (None, Some(b), _) => BackendKind::parse(b)?,
        (None, None, Some(b)) => BackendKind::parse(&b)?,
        (None, None, None) => BackendKind::MockGloss,
    };
    let names = if args.strategies.is_empty() {
        f.strategies.clone().unwrap_or_default()
    } else {
        args.strategies.clone()
    };
    let k = pick(args.k, f.k, None).unwrap_or(5);
    let q = pick(args.q, f.q, None).unwrap_or(2);
    let n_shots = pick(args.n_shots, f.n_shots, None).unwrap_or(20);
    let runs = pick(args.runs, f.runs, None).unwrap_or(3);
    let cfgs = strategy_configs(&names, k, q, n_shots, runs, seed)?;
    let mode = bleu_mode(args.bleu_mode.clone(), f.bleu_mode.clone())?;
    let model = pick(args.model.clone(), f.model.clone(), env("MODEL"))
        .unwrap_or_else(|| DEFAULT_MODEL.into());
    let language = pick(args.language.clone(), f.language.clone(), env("LANGUAGE"))
        .unwrap_or_else(|| "Amis".into());
    let char_budget = pick(args.char_budget, f.char_budget, None).unwrap_or(DEFAULT_CHAR_BUDGET);
    let threshold =
        pick(args.gloss_threshold, f.gloss_threshold, None).unwrap_or(Glosser::DEFAULT_THRESHOLD);
    let reuse = args.reuse_cot_trials || f.reuse_cot_trials.unwrap_or(false);
    let out = pick(args.out.clone(), f.out.clone(), None).unwrap_or_else(|| PathBuf::from("out"));
    let dump = pick(args.dump_prompts.clone(), f.dump_prompts.clone(), None);
    let lexicon_path = require(
        pick(args.lexicon.clone(), f.lexicon.clone(), None),
        "--lexicon",
    )?;
    let fixture_path = pick(
        args.fixture.clone(),
        f.fixture.clone(),
        env("FIXTURE").map(PathBuf::from),
    );
    let word_spec = pick(
        args.word_embeddings.clone(),
        f.word_embeddings.clone(),
        env("WORD_EMBEDDINGS"),
    )
    .unwrap_or_else(|| "hash".into());
    let rpm = pick(
        args.requests_per_minute,
        f.requests_per_minute,
        env_parsed("REQUESTS_PER_MINUTE")?,
    )
    .unwrap_or(60);
    let endpoint = pick(args.endpoint.clone(), f.endpoint.clone(), env("ENDPOINT"));

    let (corpus, split_manifest, split) = load_split(g, args.corpus.clone(), args.split.clone())?;
    for cfg in &cfgs {
        cfg.validate(split.reference.len())?;
    }
    let lexicon = Arc::new(load_lexicon(&lexicon_path)?);
    let (sentence_spec, sentence) = sentence_provider(g, args.sentence_embeddings.clone())?;
    let index_path = pick(args.index.clone(), f.index.clone(), None);
    let index = match &index_path {
        Some(path) => RetrievalIndex::from_cache(&read(path)?, &split.reference, sentence)?,
        None => RetrievalIndex::build(&split.reference, sentence)?,
    };
    let glosser = Glosser::new(
        lexicon,
        provider(&word_spec, EmbeddingKind::Word)?,
        threshold,
    );

    let backend: Arc<dyn Backend> = match backend_kind {
        BackendKind::MockGloss => Arc::new(GlossEchoBackend),
        BackendKind::MockReplay => {
            let path = require(
                fixture_path.clone(),
                "--fixture for the mock-replay backend",
            )?;
            Arc::new(ReplayBackend::new(Fixture::load(&path)?))
        }
        BackendKind::Live => {
            let mut live = LiveConfig {
                requests_per_minute: rpm,
                ..LiveConfig::default()
            };
            if let Some(e) = &endpoint {
                live.endpoint = e.clone();
            }
            Arc::new(LiveBackend::from_env(&live)?)
        }
    };

    let mut deps = Deps::new(
        Arc::new(index),
        Arc::new(glosser),
        backend,
        Language::new(&language),
    );
    deps.model = model.clone();
    deps.char_budget = char_budget;
    let opts = RunOptions {
        workers,
        reuse_cot_trials: reuse,
        bleu_mode: mode,
        corpus_sha256: corpus_hash(&corpus),
        split_seed: split_manifest.seed,
    };
    let output = run_experiment(&deps, &split, &cfgs, &opts)?;

    let mut manifest = output.manifest.clone();
    let show = |p: &Option<PathBuf>| {
        p.as_ref()
            .map_or("-".to_string(), |p| p.display().to_string())
    };
    manifest.config = vec![
        (
            "corpus".into(),
            show(&pick(args.corpus, f.corpus.clone(), None)),
        ),
        (
            "split".into(),
            show(&pick(args.split, f.split.clone(), None)),
        ),
        ("lexicon".into(), lexicon_path.display().to_string()),
        ("index".into(), show(&index_path)),
        ("out".into(), out.display().to_string()),
        ("backend".into(), backend_kind.as_str().into()),
        ("fixture".into(), show(&fixture_path)),
        ("endpoint".into(), endpoint.unwrap_or_else(|| "-".into())),
        ("seed".into(), seed.to_string()),
        (
            "strategies".into(),
            cfgs.iter().map(|c| c.label()).collect::<Vec<_>>().join(" "),
        ),
        ("runs".into(), runs.to_string()),
        ("sentence-embeddings".into(), sentence_spec),
        ("word-embeddings".into(), word_spec),
        ("requests-per-minute".into(), rpm.to_string()),
        ("dump-prompts".into(), show(&dump)),
    ];

    write(&out.join("records.tsv"), &render_records(&output.records))?;
    write(
        &out.join("transcripts.txt"),
        &ilmt::llm::transcript::render_all(&output.exchanges),
    )?;
    write(&out.join("manifest.txt"), &manifest.render())?;
    write(&out.join("report.csv"), &render_csv(&output.reports))?;
    let table = render_table(&output.reports, mode);
    write(&out.join("report.txt"), &table)?;
    if let Some(dir) = &dump {
        let n = dump_prompts(dir, &output.exchanges)?;
        eprintln!("wrote {n} prompt transcripts to {}", dir.display());
    }
    print!("{table}");
    for p in &output.problems {
        tracing::debug!(id = %p.id, strategy = %p.strategy, run = p.run, status = ?p.status, "problem");
    }
    for (cfg, stats) in &manifest.strategies {
        eprintln!(
            "{}: {} completions, {} failed, {} degraded",
            cfg.label(),
            stats.completions,
            stats.failures,
            stats.degraded
        );
        if stats.completions > 0 && stats.backend_failures == stats.completions {
            return Err(CliError::Backend(format!(
                "every completion for {} failed; see {}",
                cfg.label(),
                out.join("transcripts.txt").display()
            )));
        }
    }
    Ok(())
}

pub fn evaluate(g: &Global, args: EvaluateArgs) -> Result<(), CliError> {
    let records = parse_records(&read(&args.records)?)?;
    let corpus_path = require(pick(args.corpus, g.file.corpus.clone(), None), "--corpus")?;
    let corpus = load_corpus(&corpus_path, CorpusFormat::Auto)?;
    let by_id: HashMap<&str, &SentencePair> = corpus.iter().map(|p| (p.id.as_str(), p)).collect();
    for r in &records {
        let own = r.neighbor_id().unwrap_or(r.test_id());
        let pair = by_id.get(r.test_id()).and(by_id.get(own)).ok_or_else(|| {
            CliError::Data(format!(
                "record id `{}` is not in {}",
                r.id,
                corpus_path.display()
            ))
        })?;
        if pair.target != r.reference {
            return Err(CliError::Data(format!(
                "record `{}` carries a reference that differs from the corpus",
                r.id
            )));
        }
    }
    let mode = bleu_mode(args.bleu_mode, g.file.bleu_mode.clone())?;
    let reports = score_records(&records, mode)?;
    let table = render_table(&reports, mode);
    if let Some(out) = &args.out {
        write(&out.join("report.csv"), &render_csv(&reports))?;
        write(&out.join("report.txt"), &table)?;
    }
    print!("{table}");
    Ok(())
}

pub fn report(g: &Global, args: ReportArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for path in &args.csv {
        reports.extend(parse_csv(&read(path)?)?);
    }
    let mode = bleu_mode(args.bleu_mode, g.file.bleu_mode.clone())?;
    print!("{}", render_table(&reports, mode));
    Ok(())
}
