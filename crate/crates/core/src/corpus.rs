//! Parallel corpora, word dictionaries and the test/reference split.
//!
//! Corpus files are UTF-8 TSV with one pair per line, either
//! `<id>\t<source>\t<target>` or `<source>\t<target>`. Lexicon files are
//! `<headword>\t<gloss>`. Blank lines are skipped but still counted for
//! error line numbers.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::tsv;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: duplicate sentence id `{id}`")]
    DuplicateId { id: String, line: usize },
    #[error("test size {requested} exceeds corpus size {available}")]
    TestSizeTooLarge { requested: usize, available: usize },
    #[error("split manifest: {0}")]
    Manifest(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Stable identifier of a sentence pair within one corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SentenceId(String);

impl SentenceId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SentenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One aligned example: a Chinese source sentence and its indigenous-language
/// target. Targets are expected to be pre-tokenized with spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub id: SentenceId,
    pub source: String,
    pub target: String,
}

impl SentencePair {
    /// Builds a pair, trimming both sides. Returns `None` if either side is
    /// empty after trimming.
    pub fn new(id: impl Into<String>, source: &str, target: &str) -> Option<Self> {
        let source = source.trim();
        let target = target.trim();
        if source.is_empty() || target.is_empty() {
            return None;
        }
        Some(Self {
            id: SentenceId::new(id),
            source: source.to_string(),
            target: target.to_string(),
        })
    }
}

/// Column layout of a corpus file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    /// Decided by the first non-blank line; every later line must agree.
    #[default]
    Auto,
    /// `<id>\t<source>\t<target>`
    WithIds,
    /// `<source>\t<target>`; ids are assigned as `1`, `2`, ... in file order.
    WithoutIds,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<SentencePair>> {
    parse_corpus(&read_file(path.as_ref())?, format)
}

pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Vec<SentencePair>> {
    let mut pairs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut layout = format;

    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = tsv::strip_cr(raw);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if layout == CorpusFormat::Auto {
            layout = match cols.len() {
                3 => CorpusFormat::WithIds,
                2 => CorpusFormat::WithoutIds,
                n => {
                    return Err(CorpusError::Parse {
                        line: line_no,
                        reason: format!("expected 2 or 3 tab-separated columns, found {n}"),
                    })
                }
            };
        }
        let (id, source, target) = match (layout, cols.as_slice()) {
            (CorpusFormat::WithIds, [id, s, t]) => {
                let id = id.trim();
                if id.is_empty() {
                    return Err(CorpusError::Parse {
                        line: line_no,
                        reason: "empty id column".into(),
                    });
                }
                (id.to_string(), *s, *t)
            }
            (CorpusFormat::WithoutIds, [s, t]) => ((pairs.len() + 1).to_string(), *s, *t),
            (CorpusFormat::WithIds, _) => {
                return Err(CorpusError::Parse {
                    line: line_no,
                    reason: format!(
                        "expected 3 columns (id, source, target), found {}",
                        cols.len()
                    ),
                })
            }
            _ => {
                return Err(CorpusError::Parse {
                    line: line_no,
                    reason: format!("expected 2 columns (source, target), found {}", cols.len()),
                })
            }
        };
        let Some(pair) = SentencePair::new(id, source, target) else {
            let side = if source.trim().is_empty() {
                "source"
            } else {
                "target"
            };
            return Err(CorpusError::Parse {
                line: line_no,
                reason: format!("empty {side} sentence"),
            });
        };
        if !seen.insert(pair.id.0.clone()) {
            return Err(CorpusError::DuplicateId {
                id: pair.id.0,
                line: line_no,
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Content hash of a list of pairs (ids included), hex-encoded SHA-256.
pub fn corpus_hash(pairs: &[SentencePair]) -> String {
    let mut hasher = Sha256::new();
    for p in pairs {
        hasher.update(tsv::escape(p.id.as_str()).as_bytes());
        hasher.update(b"\t");
        hasher.update(tsv::escape(&p.source).as_bytes());
        hasher.update(b"\t");
        hasher.update(tsv::escape(&p.target).as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub headword: String,
    pub gloss: String,
}

/// Word-level Chinese-to-target dictionary. Headwords may be multi-character
/// phrases and may repeat; each repetition is a separate gloss.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    by_headword: HashMap<String, Vec<usize>>,
    headwords: Vec<String>,
    max_headword_chars: usize,
}

impl Lexicon {
    pub fn from_entries(entries: impl IntoIterator<Item = LexiconEntry>) -> Self {
        let mut lex = Lexicon::default();
        for entry in entries {
            lex.push(entry);
        }
        lex
    }

    fn push(&mut self, entry: LexiconEntry) {
        let idx = self.entries.len();
        match self.by_headword.get_mut(&entry.headword) {
            Some(slots) => slots.push(idx),
            None => {
                self.by_headword.insert(entry.headword.clone(), vec![idx]);
                self.headwords.push(entry.headword.clone());
            }
        }
        self.max_headword_chars = self.max_headword_chars.max(entry.headword.chars().count());
        self.entries.push(entry);
    }

    /// All glosses for an exact headword, in file order. Empty if absent.
    pub fn lookup(&self, headword: &str) -> Vec<&str> {
        self.by_headword
            .get(headword)
            .map(|slots| {
                slots
                    .iter()
                    .map(|&i| self.entries[i].gloss.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn first_gloss(&self, headword: &str) -> Option<&str> {
        self.by_headword
            .get(headword)
            .and_then(|slots| slots.first())
            .map(|&i| self.entries[i].gloss.as_str())
    }

    pub fn contains(&self, headword: &str) -> bool {
        self.by_headword.contains_key(headword)
    }

    /// Distinct headwords in order of first appearance.
    pub fn headwords(&self) -> &[String] {
        &self.headwords
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_headword_chars(&self) -> usize {
        self.max_headword_chars
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    parse_lexicon(&read_file(path.as_ref())?)
}

pub fn parse_lexicon(text: &str) -> Result<Lexicon> {
    let mut lex = Lexicon::default();
    for (idx, raw) in text.split('\n').enumerate() {
        let line = tsv::strip_cr(raw);
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: &str| CorpusError::Parse {
            line: idx + 1,
            reason: reason.to_string(),
        };
        let mut cols = line.split('\t');
        let (Some(head), Some(gloss), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(parse_err(
                "expected 2 tab-separated columns (headword, gloss)",
            ));
        };
        let (head, gloss) = (head.trim(), gloss.trim());
        if head.is_empty() {
            return Err(parse_err("empty headword"));
        }
        if gloss.is_empty() {
            return Err(parse_err("empty gloss"));
        }
        lex.push(LexiconEntry {
            headword: head.to_string(),
            gloss: gloss.to_string(),
        });
    }
    Ok(lex)
}

/// Held-out test pairs and the reference datastore they are translated against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub test: Vec<SentencePair>,
    pub reference: Vec<SentencePair>,
    pub seed: u64,
}

/// Uniform random split. Both halves keep corpus order.
pub fn split_corpus(pairs: &[SentencePair], test_size: usize, seed: u64) -> Result<CorpusSplit> {
    if test_size > pairs.len() {
        return Err(CorpusError::TestSizeTooLarge {
            requested: test_size,
            available: pairs.len(),
        });
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_test = vec![false; pairs.len()];
    for &i in &order[..test_size] {
        in_test[i] = true;
    }
    let (test, reference): (Vec<_>, Vec<_>) = pairs
        .iter()
        .zip(&in_test)
        .partition(|(_, &selected)| selected);
    Ok(CorpusSplit {
        test: test.into_iter().map(|(p, _)| p.clone()).collect(),
        reference: reference.into_iter().map(|(p, _)| p.clone()).collect(),
        seed,
    })
}

/// The on-disk description of a split: enough to rebuild it from the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub seed: u64,
    pub corpus_sha256: String,
    pub test: Vec<SentenceId>,
    pub reference: Vec<SentenceId>,
}

const MANIFEST_HEADER: &str = "# ilmt split manifest v1";

impl SplitManifest {
    pub fn from_split(split: &CorpusSplit, corpus: &[SentencePair]) -> Self {
        Self {
            seed: split.seed,
            corpus_sha256: corpus_hash(corpus),
            test: split.test.iter().map(|p| p.id.clone()).collect(),
            reference: split.reference.iter().map(|p| p.id.clone()).collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        out.push_str(&format!("seed\t{}\n", self.seed));
        out.push_str(&format!("corpus-sha256\t{}\n", self.corpus_sha256));
        out.push_str(&format!("test-size\t{}\n", self.test.len()));
        out.push_str(&format!("reference-size\t{}\n", self.reference.len()));
        for id in &self.test {
            out.push_str(&format!("test\t{}\n", tsv::escape(id.as_str())));
        }
        for id in &self.reference {
            out.push_str(&format!("reference\t{}\n", tsv::escape(id.as_str())));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| CorpusError::Manifest(msg);
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(bad("missing header line".into()));
        }
        let mut seed = None;
        let mut hash = None;
        let mut sizes = (None, None);
        let mut test = Vec::new();
        let mut reference = Vec::new();
        for (n, line) in lines.enumerate() {
            let Some((key, value)) = line.split_once('\t') else {
                return Err(bad(format!("line {}: expected key<TAB>value", n + 2)));
            };
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| bad(format!("line {}: `{v}` is not an integer", n + 2)))
            };
            match key {
                "seed" => seed = Some(num(value)?),
                "corpus-sha256" => hash = Some(value.to_string()),
                "test-size" => sizes.0 = Some(num(value)? as usize),
                "reference-size" => sizes.1 = Some(num(value)? as usize),
                "test" => test.push(SentenceId::new(tsv::unescape(value))),
                "reference" => reference.push(SentenceId::new(tsv::unescape(value))),
                other => return Err(bad(format!("line {}: unknown key `{other}`", n + 2))),
            }
        }
        let seed = seed.ok_or_else(|| bad("missing seed".into()))?;
        let corpus_sha256 = hash.ok_or_else(|| bad("missing corpus-sha256".into()))?;
        if sizes.0 != Some(test.len()) || sizes.1 != Some(reference.len()) {
            return Err(bad("declared sizes do not match listed ids".into()));
        }
        Ok(Self {
            seed,
            corpus_sha256,
            test,
            reference,
        })
    }

    /// Rebuilds the split against the corpus it was made from.
    pub fn resolve(&self, corpus: &[SentencePair]) -> Result<CorpusSplit> {
        let actual = corpus_hash(corpus);
        if actual != self.corpus_sha256 {
            return Err(CorpusError::Manifest(format!(
                "corpus hash mismatch: manifest has {}, corpus is {actual}",
                self.corpus_sha256
            )));
        }
        let by_id: HashMap<&SentenceId, &SentencePair> =
            corpus.iter().map(|p| (&p.id, p)).collect();
        let pick = |ids: &[SentenceId]| -> Result<Vec<SentencePair>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id)
                        .map(|p| (*p).clone())
                        .ok_or_else(|| CorpusError::Manifest(format!("unknown sentence id `{id}`")))
                })
                .collect()
        };
        Ok(CorpusSplit {
            test: pick(&self.test)?,
            reference: pick(&self.reference)?,
            seed: self.seed,
        })
    }
}
