//! Okapi BM25 over the paragraphs of a single grammar.
//!
//! Statistics are always computed per grammar: each grammar is its own
//! collection, so `N` is the paragraph count of that grammar.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;

use crate::corpus::Paragraph;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
}

impl TokenizedText {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Occurrence count per distinct token.
    pub fn counts(&self) -> BTreeMap<&str, u32> {
        let mut out = BTreeMap::new();
        for t in &self.tokens {
            *out.entry(t.as_str()).or_insert(0) += 1;
        }
        out
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

// Simple (single code point) lowercase mapping. `char::to_lowercase` is the
// full mapping; its only multi-char output is U+0130 whose simple mapping is
// the first char of the full one.
fn simple_lowercase(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

/// Maximal runs of letters, digits and combining marks, lowercased.
pub fn tokenize(text: &str) -> TokenizedText {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if is_word_char(c) {
            current.push(simple_lowercase(c));
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenizedText { tokens }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParaKey {
    pub doc_id: String,
    pub index: usize,
}

impl ParaKey {
    pub fn of(p: &Paragraph) -> Self {
        Self {
            doc_id: p.doc_id.clone(),
            index: p.index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocStats {
    pub n_docs: usize,
    pub avg_len: f64,
    pub doc_freq: HashMap<String, usize>,
    pub para_lens: HashMap<ParaKey, usize>,
}

impl DocStats {
    pub fn df(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`; never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs as f64;
        let df = self.df(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("empty grammar")]
    EmptyGrammar,
    #[error("empty query")]
    EmptyQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("unknown paragraph {0:?}")]
    UnknownParagraph(ParaKey),
}

pub fn build_stats(paragraphs: &[Paragraph]) -> Result<DocStats, RetrievalError> {
    Ok(Bm25Index::build(paragraphs)?.stats)
}

/// Per-paragraph term frequencies plus the collection statistics.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    pub stats: DocStats,
    term_freqs: Vec<HashMap<String, u32>>,
    keys: Vec<ParaKey>,
}

impl Bm25Index {
    pub fn build(paragraphs: &[Paragraph]) -> Result<Self, RetrievalError> {
        if paragraphs.is_empty() {
            return Err(RetrievalError::EmptyGrammar);
        }
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut para_lens = HashMap::with_capacity(paragraphs.len());
        let mut term_freqs = Vec::with_capacity(paragraphs.len());
        let mut keys = Vec::with_capacity(paragraphs.len());
        let mut total_len = 0usize;
        for p in paragraphs {
            let toks = tokenize(&p.text);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &toks.tokens {
                *tf.entry(t.clone()).or_insert(0) += 1;
            }
            for term in tf.keys() {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
            total_len += toks.tokens.len();
            let key = ParaKey::of(p);
            para_lens.insert(key.clone(), toks.tokens.len());
            term_freqs.push(tf);
            keys.push(key);
        }
        let stats = DocStats {
            n_docs: paragraphs.len(),
            avg_len: total_len as f64 / paragraphs.len() as f64,
            doc_freq,
            para_lens,
        };
        Ok(Self {
            stats,
            term_freqs,
            keys,
        })
    }

    pub fn term_freqs(&self, position: usize) -> &HashMap<String, u32> {
        &self.term_freqs[position]
    }

    /// Scores the paragraph at `position` in the list the index was built from.
    pub fn score_at(&self, query: &TokenizedText, position: usize, params: Bm25Params) -> f64 {
        bm25_score(
            query,
            &self.keys[position],
            &self.stats,
            params,
            &self.term_freqs[position],
        )
        .expect("index keys are always present in its own stats")
    }
}

/// Okapi BM25 with query-term-frequency weighting:
///
/// `Σ_t qtf(t) · idf(t) · tf(t)(k1+1) / (tf(t) + k1(1 − b + b·dl/avgdl))`
pub fn bm25_score(
    query: &TokenizedText,
    para_key: &ParaKey,
    stats: &DocStats,
    params: Bm25Params,
    term_freqs: &HashMap<String, u32>,
) -> Result<f64, RetrievalError> {
    let dl = *stats
        .para_lens
        .get(para_key)
        .ok_or_else(|| RetrievalError::UnknownParagraph(para_key.clone()))? as f64;
    // avg_len is 0 only when no paragraph has a token, in which case every tf is 0.
    let rel_len = if stats.avg_len > 0.0 {
        dl / stats.avg_len
    } else {
        1.0
    };
    let norm = params.k1 * (1.0 - params.b + params.b * rel_len);
    let score = query
        .counts()
        .into_iter()
        .filter_map(|(term, qtf)| {
            let tf = f64::from(*term_freqs.get(term)?);
            Some(f64::from(qtf) * stats.idf(term) * tf * (params.k1 + 1.0) / (tf + norm))
        })
        .sum();
    Ok(score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Bm25,
    Reranked,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub paragraph: Paragraph,
    pub score: f64,
    pub rank: usize,
}

/// An ordered retrieval result. Ranks run 1..=len.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredList {
    pub provenance: Provenance,
    pub entries: Vec<ScoredEntry>,
}

impl ScoredList {
    /// Builds a list from already ordered (paragraph, score) pairs.
    pub fn from_ordered(
        provenance: Provenance,
        items: impl IntoIterator<Item = (Paragraph, f64)>,
    ) -> Self {
        let entries = items
            .into_iter()
            .enumerate()
            .map(|(i, (paragraph, score))| ScoredEntry {
                paragraph,
                score,
                rank: i + 1,
            })
            .collect();
        Self {
            provenance,
            entries,
        }
    }

    /// Human-selected evidence carries score 0.
    pub fn human(paragraphs: Vec<Paragraph>) -> Self {
        Self::from_ordered(Provenance::Human, paragraphs.into_iter().map(|p| (p, 0.0)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn paragraphs(&self) -> impl Iterator<Item = &Paragraph> {
        self.entries.iter().map(|e| &e.paragraph)
    }
}

/// Ranks `paragraphs` by BM25 against `query_text` and keeps the best `k`.
/// Ties go to the lower paragraph index.
pub fn retrieve_top_k(
    paragraphs: &[Paragraph],
    query_text: &str,
    k: usize,
    params: Bm25Params,
) -> Result<ScoredList, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let query = tokenize(query_text);
    if query.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let index = Bm25Index::build(paragraphs)?;
    let mut scored: Vec<(usize, f64)> = (0..paragraphs.len())
        .map(|i| (i, index.score_at(&query, i, params)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| paragraphs[a.0].index.cmp(&paragraphs[b.0].index))
    });
    scored.truncate(k);
    Ok(ScoredList::from_ordered(
        Provenance::Bm25,
        scored.into_iter().map(|(i, s)| (paragraphs[i].clone(), s)),
    ))
}
