//! Corpus-level BLEU and chrF++, plus mean/std aggregation over runs.
//!
//! BLEU: whitespace tokens, case-sensitive, clipped n-gram counts summed over
//! the corpus, brevity penalty `min(1, exp(1 - r/c))` on total lengths, no
//! smoothing (any order with zero matches gives 0). By default BLEU-n is
//! cumulative, the geometric mean of precisions 1..=n.
//!
//! chrF++: character n-grams of orders 1..=6 over the text with whitespace
//! removed, plus word n-grams of orders 1..=2 over whitespace tokens with one
//! leading or trailing ASCII punctuation mark split off. Counts are summed
//! over the corpus, precision and recall are averaged over the orders where
//! both hypothesis and reference have n-grams, and combined with β = 2.

use std::collections::HashMap;
use std::hash::Hash;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("BLEU order must be at least 1")]
    InvalidOrder,
    #[error("cannot aggregate zero runs")]
    NoRuns,
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredPair {
    pub id: String,
    pub hypothesis: String,
    pub reference: String,
}

impl ScoredPair {
    pub fn new(
        id: impl Into<String>,
        hypothesis: impl Into<String>,
        reference: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            hypothesis: hypothesis.into(),
            reference: reference.into(),
        }
    }
}

/// Which precisions BLEU-n combines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BleuMode {
    /// Geometric mean of the 1..=n gram precisions.
    #[default]
    Cumulative,
    /// The n-gram precision alone.
    OrderOnly,
}

impl BleuMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BleuMode::Cumulative => "cumulative",
            BleuMode::OrderOnly => "order-only",
        }
    }
}

fn ngram_counts<T: Hash + Eq + Clone>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || items.len() < n {
        return counts;
    }
    for w in items.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// (clipped matches, hypothesis n-gram total) for one sentence.
fn clipped<T: Hash + Eq + Clone>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matches = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, hyp.len().saturating_sub(n - 1))
}

pub fn bleu_n(pairs: &[ScoredPair], n: usize) -> Result<f64> {
    bleu_n_with(pairs, n, BleuMode::Cumulative)
}

pub fn bleu_n_with(pairs: &[ScoredPair], n: usize, mode: BleuMode) -> Result<f64> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if n == 0 {
        return Err(MetricError::InvalidOrder);
    }
    let mut matches = vec![0usize; n];
    let mut totals = vec![0usize; n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for p in pairs {
        let hyp: Vec<&str> = p.hypothesis.split_whitespace().collect();
        let reference: Vec<&str> = p.reference.split_whitespace().collect();
        hyp_len += hyp.len();
        ref_len += reference.len();
        for order in 1..=n {
            let (m, t) = clipped(&hyp, &reference, order);
            matches[order - 1] += m;
            totals[order - 1] += t;
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let orders: Vec<usize> = match mode {
        BleuMode::Cumulative => (0..n).collect(),
        BleuMode::OrderOnly => vec![n - 1],
    };
    if orders.iter().any(|&i| matches[i] == 0) {
        return Ok(0.0);
    }
    let log_mean = orders
        .iter()
        .map(|&i| (matches[i] as f64 / totals[i] as f64).ln())
        .sum::<f64>()
        / orders.len() as f64;
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * log_mean.exp())
}

pub const CHRF_CHAR_ORDER: usize = 6;
pub const CHRF_WORD_ORDER: usize = 2;
pub const CHRF_BETA: f64 = 2.0;

fn is_ascii_punct(c: char) -> bool {
    c.is_ascii_punctuation()
}

/// Whitespace tokens with a single leading or trailing ASCII punctuation
/// mark split into its own token (trailing checked first).
fn chrf_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for w in text.split_whitespace() {
        let chars: Vec<char> = w.chars().collect();
        if chars.len() == 1 {
            out.push(w.to_string());
        } else if is_ascii_punct(chars[chars.len() - 1]) {
            out.push(chars[..chars.len() - 1].iter().collect());
            out.push(chars[chars.len() - 1].to_string());
        } else if is_ascii_punct(chars[0]) {
            out.push(chars[0].to_string());
            out.push(chars[1..].iter().collect());
        } else {
            out.push(w.to_string());
        }
    }
    out
}

/// Per order: (hypothesis count, reference count, matches).
#[derive(Debug, Clone, Copy, Default)]
struct OrderStats {
    hyp: usize,
    reference: usize,
    matches: usize,
}

fn accumulate<T: Hash + Eq + Clone>(stats: &mut OrderStats, hyp: &[T], reference: &[T], n: usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let hyp_total: usize = h.values().sum();
    let matches: usize = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    // A reference with no n-grams of this order contributes no hypothesis
    // count either, so the order drops out instead of scoring zero.
    stats.hyp += if r.is_empty() { 0 } else { hyp_total };
    stats.reference += r.values().sum::<usize>();
    stats.matches += matches;
}

pub fn chrf_pp(pairs: &[ScoredPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut stats = [OrderStats::default(); CHRF_CHAR_ORDER + CHRF_WORD_ORDER];
    for p in pairs {
        let hyp_chars: Vec<char> = p
            .hypothesis
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        let ref_chars: Vec<char> = p.reference.chars().filter(|c| !c.is_whitespace()).collect();
        for n in 1..=CHRF_CHAR_ORDER {
            accumulate(&mut stats[n - 1], &hyp_chars, &ref_chars, n);
        }
        let hyp_words = chrf_words(&p.hypothesis);
        let ref_words = chrf_words(&p.reference);
        for n in 1..=CHRF_WORD_ORDER {
            accumulate(
                &mut stats[CHRF_CHAR_ORDER + n - 1],
                &hyp_words,
                &ref_words,
                n,
            );
        }
    }
    let (mut prec, mut rec, mut effective) = (0.0, 0.0, 0usize);
    for s in &stats {
        if s.hyp > 0 && s.reference > 0 {
            prec += s.matches as f64 / s.hyp as f64;
            rec += s.matches as f64 / s.reference as f64;
            effective += 1;
        }
    }
    if effective == 0 {
        return Ok(0.0);
    }
    prec /= effective as f64;
    rec /= effective as f64;
    if prec + rec == 0.0 {
        return Ok(0.0);
    }
    let b2 = CHRF_BETA * CHRF_BETA;
    Ok(100.0 * (1.0 + b2) * prec * rec / (b2 * prec + rec))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub chrf: f64,
    pub n_pairs: usize,
}

impl ScoreReport {
    pub const METRICS: [&'static str; 4] = ["BLEU1", "BLEU2", "BLEU3", "chrF++"];

    pub fn score(pairs: &[ScoredPair], mode: BleuMode) -> Result<Self> {
        Ok(Self {
            bleu1: bleu_n_with(pairs, 1, mode)?,
            bleu2: bleu_n_with(pairs, 2, mode)?,
            bleu3: bleu_n_with(pairs, 3, mode)?,
            chrf: chrf_pp(pairs)?,
            n_pairs: pairs.len(),
        })
    }

    pub fn values(&self) -> [f64; 4] {
        [self.bleu1, self.bleu2, self.bleu3, self.chrf]
    }

    fn from_values(v: [f64; 4], n_pairs: usize) -> Self {
        Self {
            bleu1: v[0],
            bleu2: v[1],
            bleu3: v[2],
            chrf: v[3],
            n_pairs,
        }
    }
}

/// Per-metric arithmetic mean and population standard deviation.
pub fn aggregate(runs: &[ScoreReport]) -> Result<(ScoreReport, ScoreReport)> {
    if runs.is_empty() {
        return Err(MetricError::NoRuns);
    }
    let n = runs.len() as f64;
    let mut mean = [0.0; 4];
    for r in runs {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 4];
    for r in runs {
        for ((acc, v), m) in var.iter_mut().zip(r.values()).zip(mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let std = var.map(|v| (v / n).sqrt());
    let n_pairs = runs[0].n_pairs;
    Ok((
        ScoreReport::from_values(mean, n_pairs),
        ScoreReport::from_values(std, n_pairs),
    ))
}
