//! Sentence and word embeddings behind a provider trait, cosine similarity,
//! and the on-disk embedding cache.
//!
//! # Hashing provider
//!
//! [`HashingProvider`] is an offline, model-free embedder. For every order
//! `n` in its order range and every window of `n` consecutive Unicode scalar
//! values of the text, it hashes the byte string `[n as u8] ++ utf8(window)`
//! with 64-bit FNV-1a and adds `1.0` to component `hash % dim`. Vectors are
//! left unnormalized; every non-empty text yields a non-zero vector.
//!
//! # Cache file
//!
//! One record per line: `provider-name\ttext-sha256\tdim\tv1,v2,...` where
//! the values use Rust's shortest round-trip float formatting.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::http::{HttpError, JsonClient};
use crate::tsv;

#[derive(Debug, Clone, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector has no direction")]
    ZeroNorm,
    #[error("embedding must have dim > 0 and finite values")]
    Invalid,
    #[error("provider `{provider}` has no vector for `{text}`")]
    Unknown { provider: String, text: String },
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("embedding cache line {line}: {reason}")]
    Cache { line: usize, reason: String },
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// A finite, non-empty vector of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::Invalid);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Euclidean norm, summed left to right.
    pub fn norm(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
    }
}

/// Cosine similarity `(a·b) / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
///
/// The dot product and both squared norms are accumulated in `f64` strictly
/// left to right over component index, so the result is exactly symmetric.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    let dot = a
        .values()
        .iter()
        .zip(b.values())
        .fold(0.0, |acc, (x, y)| acc + x * y);
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Sentence,
    Word,
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingKind::Sentence => "sentence",
            EmbeddingKind::Word => "word",
        })
    }
}

/// Anything that maps text to a fixed-length vector, deterministically.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn kind(&self) -> EmbeddingKind;
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> EmbeddingKind {
        (**self).kind()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed(text)
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Character n-gram feature hashing; see the module docs for the scheme.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    name: String,
    dim: usize,
    min_order: usize,
    max_order: usize,
    kind: EmbeddingKind,
}

impl HashingProvider {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize, min_order: usize, max_order: usize, kind: EmbeddingKind) -> Self {
        assert!(dim > 0, "hashing provider needs dim > 0");
        assert!(
            (1..=max_order).contains(&min_order) && max_order <= u8::MAX as usize,
            "invalid n-gram order range {min_order}..={max_order}"
        );
        Self {
            name: format!("hash-ngram-fnv1a:dim={dim}:n={min_order}-{max_order}:{kind}"),
            dim,
            min_order,
            max_order,
            kind,
        }
    }

    /// 256 dimensions, orders 1 to 3.
    pub fn sentence() -> Self {
        Self::new(Self::DEFAULT_DIM, 1, 3, EmbeddingKind::Sentence)
    }

    pub fn word() -> Self {
        Self::new(Self::DEFAULT_DIM, 1, 3, EmbeddingKind::Word)
    }
}

impl EmbeddingProvider for HashingProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let chars: Vec<char> = text.chars().collect();
        let mut values = vec![0.0; self.dim];
        let mut key = Vec::new();
        for n in self.min_order..=self.max_order {
            for window in chars.windows(n) {
                key.clear();
                key.push(n as u8);
                let mut buf = [0u8; 4];
                for c in window {
                    key.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                }
                values[(fnv1a64(&key) % self.dim as u64) as usize] += 1.0;
            }
        }
        EmbeddingVector::new(values)
    }
}

/// Fixed text-to-vector table, typically pretrained word vectors. Texts not
/// in the table are a provider error.
///
/// File format: `text\tv1,v2,...` per line, all rows the same length.
#[derive(Debug, Clone)]
pub struct TableProvider {
    name: String,
    dim: usize,
    kind: EmbeddingKind,
    table: HashMap<String, EmbeddingVector>,
}

impl TableProvider {
    pub fn new(
        name: impl Into<String>,
        kind: EmbeddingKind,
        rows: impl IntoIterator<Item = (String, EmbeddingVector)>,
    ) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (text, vec) in rows {
            match dim {
                None => dim = Some(vec.dim()),
                Some(d) if d != vec.dim() => {
                    return Err(EmbeddingError::DimensionMismatch {
                        left: d,
                        right: vec.dim(),
                    })
                }
                _ => {}
            }
            table.insert(text, vec);
        }
        Ok(Self {
            name: name.into(),
            dim: dim.ok_or(EmbeddingError::Invalid)?,
            kind,
            table,
        })
    }

    pub fn parse(name: impl Into<String>, kind: EmbeddingKind, text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let err = |reason: &str| EmbeddingError::Cache {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let (word, values) = raw
                .split_once('\t')
                .ok_or_else(|| err("expected text<TAB>values"))?;
            let values = parse_values(values).ok_or_else(|| err("bad vector values"))?;
            let vec =
                EmbeddingVector::new(values).map_err(|_| err("empty or non-finite vector"))?;
            rows.push((tsv::unescape(word), vec));
        }
        Self::new(name, kind, rows)
    }

    pub fn load(path: impl AsRef<Path>, kind: EmbeddingKind) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EmbeddingError::Cache {
            line: 0,
            reason: format!("{}: {e}", path.display()),
        })?;
        let name = format!(
            "table:{}",
            path.file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default()
        );
        Self::parse(name, kind, &text)
    }
}

impl EmbeddingProvider for TableProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| EmbeddingError::Unknown {
                provider: self.name.clone(),
                text: text.to_string(),
            })
    }
}

/// Embedding service speaking the common `POST {base}/embeddings` protocol:
/// request `{"model": .., "input": ..}`, response `{"data": [{"embedding": [..]}]}`.
pub struct RemoteProvider {
    name: String,
    url: String,
    model: String,
    token: Option<String>,
    dim: usize,
    kind: EmbeddingKind,
    client: JsonClient,
}

impl RemoteProvider {
    /// `dim` must be the service's output dimension; responses of any other
    /// length are rejected as protocol errors.
    pub fn new(
        base_url: &str,
        model: impl Into<String>,
        token: Option<String>,
        dim: usize,
        kind: EmbeddingKind,
        client: JsonClient,
    ) -> Self {
        let model = model.into();
        Self {
            name: format!("remote:{model}"),
            url: format!("{}/embeddings", base_url.trim_end_matches('/')),
            model,
            token,
            dim,
            kind,
            client,
        }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let body = json!({ "model": self.model, "input": text });
        let (resp, _) = self.client.post(&self.url, self.token.as_deref(), &body)?;
        let protocol = |message: &str| {
            EmbeddingError::Http(HttpError::Protocol {
                message: message.to_string(),
                payload: resp.to_string(),
            })
        };
        let values: Vec<f64> = resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| protocol("missing data[0].embedding"))?
            .iter()
            .map(|v| v.as_f64())
            .collect::<Option<_>>()
            .ok_or_else(|| protocol("non-numeric embedding component"))?;
        if values.len() != self.dim {
            return Err(protocol(&format!(
                "expected {} components, got {}",
                self.dim,
                values.len()
            )));
        }
        EmbeddingVector::new(values).map_err(|_| protocol("non-finite embedding"))
    }
}

pub fn text_sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn parse_values(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|v| v.trim().parse::<f64>().ok()).collect()
}

fn format_values(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    parts.join(",")
}

/// Persistent store of vectors keyed by (provider name, SHA-256 of text).
/// Iteration and rendering are in key order, so renders are reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingCache {
    records: BTreeMap<(String, String), EmbeddingVector>,
}

impl EmbeddingCache {
    pub fn get(&self, provider: &str, text: &str) -> Option<&EmbeddingVector> {
        self.records.get(&(provider.to_string(), text_sha256(text)))
    }

    pub fn insert(&mut self, provider: &str, text: &str, vec: EmbeddingVector) {
        self.records
            .insert((provider.to_string(), text_sha256(text)), vec);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for ((provider, hash), vec) in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                tsv::escape(provider),
                hash,
                vec.dim(),
                format_values(vec.values())
            ));
        }
        out
    }

    /// Parses cache records. `first_line` offsets reported line numbers for
    /// files that embed the records after a header.
    pub fn parse_records<'a>(
        lines: impl Iterator<Item = &'a str>,
        first_line: usize,
    ) -> Result<Self> {
        let mut cache = Self::default();
        for (idx, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: &str| EmbeddingError::Cache {
                line: first_line + idx,
                reason: reason.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            let [provider, hash, dim, values] = cols.as_slice() else {
                return Err(err("expected 4 tab-separated columns"));
            };
            let dim: usize = dim.parse().map_err(|_| err("bad dim"))?;
            let values = parse_values(values).ok_or_else(|| err("bad vector values"))?;
            if values.len() != dim {
                return Err(err("dim does not match value count"));
            }
            if hash.len() != 64 || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(err("text hash is not a sha256 hex digest"));
            }
            let vec =
                EmbeddingVector::new(values).map_err(|_| err("empty or non-finite vector"))?;
            cache
                .records
                .insert((tsv::unescape(provider), hash.to_string()), vec);
        }
        Ok(cache)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_records(text.lines(), 1)
    }
}

/// Memoizing wrapper: each distinct text is embedded once per process.
pub struct CachedProvider<P> {
    inner: P,
    cache: Mutex<EmbeddingCache>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P) -> Self {
        Self::with_cache(inner, EmbeddingCache::default())
    }

    pub fn with_cache(inner: P, cache: EmbeddingCache) -> Self {
        Self {
            inner,
            cache: Mutex::new(cache),
        }
    }

    pub fn snapshot(&self) -> EmbeddingCache {
        self.cache.lock().unwrap().clone()
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn kind(&self) -> EmbeddingKind {
        self.inner.kind()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if let Some(v) = self.cache.lock().unwrap().get(self.inner.name(), text) {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text)?;
        self.cache
            .lock()
            .unwrap()
            .insert(self.inner.name(), text, v.clone());
        Ok(v)
    }
}
