//! Exact nearest-neighbor retrieval over the reference datastore and
//! dictionary glossing of source sentences. Together they form the retrieved
//! prompting context (RPC) handed to the prompt renderers.

use std::sync::{Arc, OnceLock};

use crate::corpus::{corpus_hash, Lexicon, SentenceId, SentencePair};
use crate::embedding::{
    cosine_similarity, fnv1a64, EmbeddingCache, EmbeddingError, EmbeddingProvider, EmbeddingVector,
};

#[derive(Debug, Clone, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot build an index over an empty reference set")]
    EmptyReference,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedding sentence {id}: {source}")]
    Embedding {
        id: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("index cache: {0}")]
    Cache(String),
}

pub type Result<T, E = RetrievalError> = std::result::Result<T, E>;

/// Embedded reference pairs, in reference order. Queries are embedded with
/// the same provider that built the index.
pub struct RetrievalIndex {
    entries: Vec<(SentencePair, EmbeddingVector)>,
    provider: Arc<dyn EmbeddingProvider>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub pair: SentencePair,
    pub similarity: f64,
    /// Position of the pair in the reference set.
    pub position: usize,
}

/// Filters and tie handling for a single retrieval.
#[derive(Debug, Clone, Default)]
pub struct KnnOptions {
    /// Pairs with these ids are never returned.
    pub exclude_ids: Vec<SentenceId>,
    /// Drop pairs whose source equals the query text verbatim.
    pub exclude_exact_match: bool,
    /// `None` breaks similarity ties by ascending reference position. With a
    /// seed, tied entries are ordered by a seeded hash of their position.
    pub tie_seed: Option<u64>,
}

fn tie_key(seed: Option<u64>, position: usize) -> u64 {
    match seed {
        None => position as u64,
        Some(seed) => {
            let mut bytes = [0u8; 16];
            bytes[..8].copy_from_slice(&seed.to_le_bytes());
            bytes[8..].copy_from_slice(&(position as u64).to_le_bytes());
            fnv1a64(&bytes)
        }
    }
}

const INDEX_HEADER: &str = "# ilmt index v1";

impl RetrievalIndex {
    /// Embeds the source side of every reference pair.
    pub fn build(reference: &[SentencePair], provider: Arc<dyn EmbeddingProvider>) -> Result<Self> {
        Self::build_with_cache(reference, provider, None)
    }

    /// Like [`build`](Self::build) but takes vectors from `cache` when present.
    pub fn build_with_cache(
        reference: &[SentencePair],
        provider: Arc<dyn EmbeddingProvider>,
        cache: Option<&EmbeddingCache>,
    ) -> Result<Self> {
        if reference.is_empty() {
            return Err(RetrievalError::EmptyReference);
        }
        let mut entries = Vec::with_capacity(reference.len());
        for pair in reference {
            let cached = cache
                .and_then(|c| c.get(provider.name(), &pair.source))
                .filter(|v| v.dim() == provider.dim())
                .cloned();
            let vec =
                match cached {
                    Some(v) => v,
                    None => provider.embed(&pair.source).map_err(|source| {
                        RetrievalError::Embedding {
                            id: pair.id.to_string(),
                            source,
                        }
                    })?,
                };
            if vec.dim() != provider.dim() {
                return Err(RetrievalError::Embedding {
                    id: pair.id.to_string(),
                    source: EmbeddingError::DimensionMismatch {
                        left: provider.dim(),
                        right: vec.dim(),
                    },
                });
            }
            entries.push((pair.clone(), vec));
        }
        Ok(Self { entries, provider })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    pub fn pairs(&self) -> impl Iterator<Item = &SentencePair> {
        self.entries.iter().map(|(p, _)| p)
    }

    pub fn embed_query(&self, query: &str) -> Result<EmbeddingVector> {
        self.provider
            .embed(query)
            .map_err(|source| RetrievalError::Embedding {
                id: "<query>".into(),
                source,
            })
    }

    /// The `min(k, n)` most similar reference pairs, most similar first,
    /// ties in reference order.
    pub fn knn(&self, query: &str, k: usize) -> Result<Vec<Neighbor>> {
        self.knn_with(query, k, &KnnOptions::default())
    }

    pub fn knn_with(&self, query: &str, k: usize, opts: &KnnOptions) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let qv = self.embed_query(query)?;
        let mut scored: Vec<(f64, u64, usize)> = Vec::with_capacity(self.entries.len());
        for (pos, (pair, vec)) in self.entries.iter().enumerate() {
            if opts.exclude_ids.contains(&pair.id)
                || (opts.exclude_exact_match && pair.source == query)
            {
                continue;
            }
            let sim = cosine_similarity(&qv, vec).map_err(|source| RetrievalError::Embedding {
                id: pair.id.to_string(),
                source,
            })?;
            scored.push((sim, tie_key(opts.tie_seed, pos), pos));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(similarity, _, position)| Neighbor {
                pair: self.entries[position].0.clone(),
                similarity,
                position,
            })
            .collect())
    }

    /// Cache file: a header binding provider and reference-set hash, then
    /// one embedding-cache record per distinct source sentence.
    pub fn render_cache(&self) -> String {
        let pairs: Vec<SentencePair> = self.pairs().cloned().collect();
        let mut cache = EmbeddingCache::default();
        for (pair, vec) in &self.entries {
            cache.insert(self.provider.name(), &pair.source, vec.clone());
        }
        format!(
            "{INDEX_HEADER}\tprovider={}\tcorpus-sha256={}\tentries={}\n{}",
            self.provider.name(),
            corpus_hash(&pairs),
            self.entries.len(),
            cache.render()
        )
    }

    /// Loads vectors from a cache written by [`render_cache`](Self::render_cache).
    /// Fails if the cache was built for another provider or reference set.
    pub fn from_cache(
        text: &str,
        reference: &[SentencePair],
        provider: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| RetrievalError::Cache("empty cache file".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        let expected = [
            INDEX_HEADER.to_string(),
            format!("provider={}", provider.name()),
            format!("corpus-sha256={}", corpus_hash(reference)),
            format!("entries={}", reference.len()),
        ];
        if fields != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(RetrievalError::Cache(format!(
                "header `{header}` does not match provider `{}` and this reference set",
                provider.name()
            )));
        }
        let cache = EmbeddingCache::parse_records(lines, 2)
            .map_err(|e| RetrievalError::Cache(e.to_string()))?;
        for pair in reference {
            if cache.get(provider.name(), &pair.source).is_none() {
                return Err(RetrievalError::Cache(format!(
                    "no vector for sentence {}",
                    pair.id
                )));
            }
        }
        Self::build_with_cache(reference, provider, Some(&cache))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlossOrigin {
    Exact,
    Substitute,
    Missing,
}

/// Dictionary translation of one segment of the source sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordGloss {
    pub surface: String,
    pub gloss: String,
    pub origin: GlossOrigin,
    /// Headword whose gloss was borrowed, for substitutes only.
    pub substitute_of: Option<String>,
}

impl WordGloss {
    fn exact(surface: &str, gloss: &str) -> Self {
        Self {
            surface: surface.to_string(),
            gloss: gloss.to_string(),
            origin: GlossOrigin::Exact,
            substitute_of: None,
        }
    }

    fn missing(surface: &str) -> Self {
        Self {
            surface: surface.to_string(),
            gloss: String::new(),
            origin: GlossOrigin::Missing,
            substitute_of: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlossOutcome {
    pub glosses: Vec<WordGloss>,
    pub warnings: Vec<String>,
}

/// Whitespace, ASCII punctuation, and the CJK / fullwidth / general
/// punctuation blocks.
pub fn is_punct_or_space(c: char) -> bool {
    c.is_whitespace()
        || c.is_ascii_punctuation()
        || matches!(c,
            '\u{2000}'..='\u{206F}'
            | '\u{3000}'..='\u{303F}'
            | '\u{FE30}'..='\u{FE4F}'
            | '\u{FF01}'..='\u{FF0F}'
            | '\u{FF1A}'..='\u{FF20}'
            | '\u{FF3B}'..='\u{FF40}'
            | '\u{FF5B}'..='\u{FF65}'
            | '\u{00A1}'..='\u{00BF}')
}

/// Segments sentences against a lexicon and glosses each segment.
///
/// Segmentation is greedy longest match, left to right. Characters no
/// headword starts at are looked up one by one through the word-embedding
/// provider: the most similar headword (first in lexicon order on ties)
/// lends its gloss if its similarity reaches `threshold`.
pub struct Glosser {
    lexicon: Arc<Lexicon>,
    word_provider: Option<Arc<dyn EmbeddingProvider>>,
    threshold: f64,
    headword_vectors: OnceLock<(Vec<Option<EmbeddingVector>>, Vec<String>)>,
}

impl Glosser {
    pub const DEFAULT_THRESHOLD: f64 = 0.6;

    pub fn new(
        lexicon: Arc<Lexicon>,
        word_provider: Option<Arc<dyn EmbeddingProvider>>,
        threshold: f64,
    ) -> Self {
        Self {
            lexicon,
            word_provider,
            threshold,
            headword_vectors: OnceLock::new(),
        }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn word_provider_name(&self) -> Option<&str> {
        self.word_provider.as_deref().map(|p| p.name())
    }

    fn headword_vectors(
        &self,
        provider: &dyn EmbeddingProvider,
    ) -> &(Vec<Option<EmbeddingVector>>, Vec<String>) {
        self.headword_vectors.get_or_init(|| {
            let mut warnings = Vec::new();
            let vecs = self
                .lexicon
                .headwords()
                .iter()
                .map(|h| match provider.embed(h) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        warnings.push(format!("headword `{h}` has no word vector: {e}"));
                        None
                    }
                })
                .collect();
            (vecs, warnings)
        })
    }

    fn substitute(&self, surface: &str, warnings: &mut Vec<String>) -> WordGloss {
        let Some(provider) = self.word_provider.as_deref() else {
            return WordGloss::missing(surface);
        };
        let query = match provider.embed(surface) {
            Ok(v) => v,
            Err(e) => {
                let msg = format!("no substitute for `{surface}`: {e}");
                tracing::warn!("{msg}");
                warnings.push(msg);
                return WordGloss::missing(surface);
            }
        };
        let (vectors, _) = self.headword_vectors(provider);
        let mut best: Option<(f64, usize)> = None;
        for (i, vec) in vectors.iter().enumerate() {
            let Some(vec) = vec else { continue };
            let Ok(sim) = cosine_similarity(&query, vec) else {
                continue;
            };
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, i));
            }
        }
        match best {
            Some((sim, i)) if sim >= self.threshold => {
                let headword = &self.lexicon.headwords()[i];
                let gloss = self.lexicon.first_gloss(headword).unwrap_or_default();
                tracing::debug!(surface, headword = %headword, sim, "substitute gloss");
                WordGloss {
                    surface: surface.to_string(),
                    gloss: gloss.to_string(),
                    origin: GlossOrigin::Substitute,
                    substitute_of: Some(headword.clone()),
                }
            }
            _ => WordGloss::missing(surface),
        }
    }

    pub fn gloss(&self, sentence: &str) -> GlossOutcome {
        let bounds: Vec<usize> = sentence
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(sentence.len()))
            .collect();
        let n = bounds.len() - 1;
        let max_len = self.lexicon.max_headword_chars();
        let mut out = GlossOutcome::default();
        if let Some(p) = self.word_provider.as_deref() {
            if !self.lexicon.is_empty() {
                out.warnings
                    .extend(self.headword_vectors(p).1.iter().cloned());
            }
        }
        let mut i = 0;
        while i < n {
            let longest = max_len.min(n - i);
            let matched = (1..=longest).rev().find_map(|len| {
                let seg = &sentence[bounds[i]..bounds[i + len]];
                self.lexicon.first_gloss(seg).map(|g| (len, seg, g))
            });
            if let Some((len, seg, gloss)) = matched {
                out.glosses.push(WordGloss::exact(seg, gloss));
                i += len;
                continue;
            }
            let ch = &sentence[bounds[i]..bounds[i + 1]];
            let is_sep = ch.chars().next().is_some_and(is_punct_or_space);
            let gloss = if is_sep || self.lexicon.is_empty() {
                WordGloss::missing(ch)
            } else {
                self.substitute(ch, &mut out.warnings)
            };
            out.glosses.push(gloss);
            i += 1;
        }
        out
    }
}

/// One-shot form of [`Glosser::gloss`].
pub fn segment_and_gloss(
    lexicon: Arc<Lexicon>,
    word_provider: Option<Arc<dyn EmbeddingProvider>>,
    threshold: f64,
    sentence: &str,
) -> GlossOutcome {
    Glosser::new(lexicon, word_provider, threshold).gloss(sentence)
}

/// Retrieved prompting context for one source sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedContext {
    pub query: String,
    pub neighbors: Vec<Neighbor>,
    pub glosses: Vec<WordGloss>,
    pub k: usize,
    pub warnings: Vec<String>,
}

impl RetrievedContext {
    /// Glosses worth showing a model: everything except misses.
    pub fn usable_glosses(&self) -> impl Iterator<Item = &WordGloss> {
        self.glosses
            .iter()
            .filter(|g| g.origin != GlossOrigin::Missing)
    }
}

pub fn build_rpc(
    index: &RetrievalIndex,
    glosser: &Glosser,
    sentence: &str,
    k: usize,
) -> Result<RetrievedContext> {
    build_rpc_with(index, glosser, sentence, k, &KnnOptions::default())
}

pub fn build_rpc_with(
    index: &RetrievalIndex,
    glosser: &Glosser,
    sentence: &str,
    k: usize,
    opts: &KnnOptions,
) -> Result<RetrievedContext> {
    let neighbors = index.knn_with(sentence, k, opts)?;
    let GlossOutcome { glosses, warnings } = glosser.gloss(sentence);
    Ok(RetrievedContext {
        query: sentence.to_string(),
        neighbors,
        glosses,
        k,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_lexicon, LexiconEntry};
    use crate::embedding::{EmbeddingKind, HashingProvider, TableProvider};

    fn pairs(sources: &[&str]) -> Vec<SentencePair> {
        sources
            .iter()
            .enumerate()
            .map(|(i, s)| SentencePair::new(format!("r{i}"), s, &format!("t{i} .")).unwrap())
            .collect()
    }

    fn hashing() -> Arc<dyn EmbeddingProvider> {
        Arc::new(HashingProvider::sentence())
    }

    fn lex(rows: &str) -> Arc<Lexicon> {
        Arc::new(parse_lexicon(rows).unwrap())
    }

    #[test]
    fn index_has_one_entry_per_pair() {
        let refs = pairs(&["你好", "我也很好，謝謝。", "火車比較快。"]);
        let index = RetrievalIndex::build(&refs, hashing()).unwrap();
        assert_eq!(index.len(), 3);
        let single = RetrievalIndex::build(&refs[..1], hashing()).unwrap();
        assert_eq!(single.len(), 1);
        assert!(matches!(
            RetrievalIndex::build(&[], hashing()),
            Err(RetrievalError::EmptyReference)
        ));
    }

    #[test]
    fn self_retrieval() {
        let refs = pairs(&[
            "現在幾點鐘？",
            "我也很好，謝謝。",
            "火車比較快。",
            "要走多久呢？",
        ]);
        let index = RetrievalIndex::build(&refs, hashing()).unwrap();
        let hit = index.knn("火車比較快。", 1).unwrap();
        assert_eq!(hit.len(), 1);
        assert_eq!(hit[0].pair.id.as_str(), "r2");
        assert!((hit[0].similarity - 1.0).abs() < 1e-9);

        let opts = KnnOptions {
            exclude_exact_match: true,
            ..Default::default()
        };
        let hit = index.knn_with("火車比較快。", 4, &opts).unwrap();
        assert_eq!(hit.len(), 3);
        assert!(hit.iter().all(|n| n.pair.id.as_str() != "r2"));
    }

    #[test]
    fn k_is_clamped_and_zero_rejected() {
        let refs = pairs(&["一", "二", "三"]);
        let index = RetrievalIndex::build(&refs, hashing()).unwrap();
        assert_eq!(index.knn("一二", 10).unwrap().len(), 3);
        assert!(matches!(index.knn("一", 0), Err(RetrievalError::InvalidK)));
    }

    #[test]
    fn ties_follow_reference_order_unless_seeded() {
        // Identical sources give identical similarities.
        let refs = pairs(&["同樣", "同樣", "同樣", "同樣", "同樣", "同樣"]);
        let index = RetrievalIndex::build(&refs, hashing()).unwrap();
        let order: Vec<usize> = index
            .knn("同樣", 6)
            .unwrap()
            .iter()
            .map(|n| n.position)
            .collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4, 5]);
        let seeded = |seed| -> Vec<usize> {
            let opts = KnnOptions {
                tie_seed: Some(seed),
                ..Default::default()
            };
            index
                .knn_with("同樣", 6, &opts)
                .unwrap()
                .iter()
                .map(|n| n.position)
                .collect()
        };
        assert_eq!(seeded(3), seeded(3));
        assert!((0..8).any(|s| seeded(s) != order));
    }

    #[test]
    fn cache_round_trip() {
        let refs = pairs(&["你好", "謝謝", "再見", "謝謝"]);
        let a = RetrievalIndex::build(&refs, hashing())
            .unwrap()
            .render_cache();
        let b = RetrievalIndex::build(&refs, hashing())
            .unwrap()
            .render_cache();
        assert_eq!(a, b);
        let loaded = RetrievalIndex::from_cache(&a, &refs, hashing()).unwrap();
        assert_eq!(loaded.render_cache(), a);
        assert!(RetrievalIndex::from_cache(&a, &refs[..3], hashing()).is_err());
        let other: Arc<dyn EmbeddingProvider> =
            Arc::new(HashingProvider::new(64, 1, 2, EmbeddingKind::Sentence));
        assert!(RetrievalIndex::from_cache(&a, &refs, other).is_err());
    }

    #[test]
    fn multi_character_phrase_glosses() {
        let lexicon = lex("很好學\tkapah\n也\taca\n很有趣\tsaka’ulahan\n很\tsangat\n");
        let out = segment_and_gloss(lexicon, None, 0.6, "很好學，也很有趣");
        let view: Vec<(&str, &str, GlossOrigin)> = out
            .glosses
            .iter()
            .map(|g| (g.surface.as_str(), g.gloss.as_str(), g.origin))
            .collect();
        assert_eq!(
            view,
            vec![
                ("很好學", "kapah", GlossOrigin::Exact),
                ("，", "", GlossOrigin::Missing),
                ("也", "aca", GlossOrigin::Exact),
                ("很有趣", "saka’ulahan", GlossOrigin::Exact),
            ]
        );
    }

    #[test]
    fn single_phrase_exact() {
        let out = segment_and_gloss(lex("很好學\tkapah\n"), None, 0.6, "很好學");
        assert_eq!(out.glosses, vec![WordGloss::exact("很好學", "kapah")]);
    }

    #[test]
    fn first_gloss_wins() {
        let out = segment_and_gloss(lex("也\taca\n也\tato\n"), None, 0.6, "也");
        assert_eq!(out.glosses[0].gloss, "aca");
    }

    #[test]
    fn total_miss_without_fallback() {
        let sentence = "鳥在天上飛。";
        let out = segment_and_gloss(lex("很\tx\n"), None, 0.6, sentence);
        assert!(out
            .glosses
            .iter()
            .all(|g| g.origin == GlossOrigin::Missing && g.gloss.is_empty()));
        let joined: String = out.glosses.iter().map(|g| g.surface.as_str()).collect();
        assert_eq!(joined, sentence);
    }

    fn word_table() -> Arc<dyn EmbeddingProvider> {
        Arc::new(
            TableProvider::parse(
                "toy-words",
                EmbeddingKind::Word,
                "最\t0.9,0.1,0.0\n專為\t1.0,0.0,0.0\n藍\t0.0,0.0,1.0\n南邊\t0.0,1.0,0.0\n好\t0.0,0.7,0.7\n",
            )
            .unwrap(),
        )
    }

    #[test]
    fn substitute_from_nearest_headword() {
        let lexicon = lex("專為\tsaka\n南邊\twali\n");
        let out = segment_and_gloss(lexicon, Some(word_table()), 0.6, "最");
        assert_eq!(
            out.glosses,
            vec![WordGloss {
                surface: "最".into(),
                gloss: "saka".into(),
                origin: GlossOrigin::Substitute,
                substitute_of: Some("專為".into()),
            }]
        );
    }

    #[test]
    fn substitute_below_threshold_is_missing() {
        let lexicon = lex("專為\tsaka\n南邊\twali\n");
        // 藍 is orthogonal to both headwords.
        let out = segment_and_gloss(lexicon.clone(), Some(word_table()), 0.6, "藍");
        assert_eq!(out.glosses[0].origin, GlossOrigin::Missing);
        // 好 vs 南邊 has cosine 0.7/sqrt(0.98) ~ 0.707.
        let strict = segment_and_gloss(lexicon.clone(), Some(word_table()), 0.8, "好");
        assert_eq!(strict.glosses[0].origin, GlossOrigin::Missing);
        let loose = segment_and_gloss(lexicon, Some(word_table()), 0.6, "好");
        assert_eq!(loose.glosses[0].substitute_of.as_deref(), Some("南邊"));
    }

    #[test]
    fn provider_failure_degrades_to_missing_with_warning() {
        let lexicon = lex("專為\tsaka\n");
        let out = segment_and_gloss(lexicon, Some(word_table()), 0.6, "鳥最");
        assert_eq!(out.glosses[0].origin, GlossOrigin::Missing);
        assert_eq!(out.glosses[1].origin, GlossOrigin::Substitute);
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("鳥"));
    }

    #[test]
    fn rpc_with_empty_lexicon_has_neighbors_only() {
        let refs = pairs(&["你好", "謝謝", "再見"]);
        let index = RetrievalIndex::build(&refs, hashing()).unwrap();
        let glosser = Glosser::new(
            Arc::new(Lexicon::from_entries(Vec::<LexiconEntry>::new())),
            None,
            0.6,
        );
        let rpc = build_rpc(&index, &glosser, "你好嗎", 2).unwrap();
        assert_eq!(rpc.neighbors.len(), 2);
        assert!(rpc.glosses.iter().all(|g| g.origin == GlossOrigin::Missing));
        assert_eq!(rpc.usable_glosses().count(), 0);
    }
}
