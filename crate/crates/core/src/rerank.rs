//! Second-stage reranking of a BM25 list with a remote embedding model.
//!
//! The query is wrapped as `Instruct: {instruct}\nQuery: {text}`; paragraphs
//! are embedded bare. Paragraphs are ordered by cosine similarity to the
//! query, ties keeping their BM25 order, and the list is cut to `top_m`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::retrieval::{tokenize, Provenance, ScoredList};
use crate::retry::{RetryPolicy, Retryable};

pub const DEFAULT_INSTRUCT: &str =
    "Given a web search query, retrieve relevant passages that answer the query";
pub const SPECIFIC_INSTRUCT: &str = "Given a definition of a linguistic feature, retrieve relevant passages that let a linguist unambiguously determine the value of this feature in the described language";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String")]
pub enum Instruct {
    Default,
    Specific,
}

impl Instruct {
    pub fn text(self) -> &'static str {
        match self {
            Instruct::Default => DEFAULT_INSTRUCT,
            Instruct::Specific => SPECIFIC_INSTRUCT,
        }
    }
}

impl FromStr for Instruct {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "default" => Ok(Instruct::Default),
            "specific" => Ok(Instruct::Specific),
            other => Err(format!(
                "unknown instruct {other:?} (expected default|specific)"
            )),
        }
    }
}

impl TryFrom<String> for Instruct {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl fmt::Display for Instruct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Instruct::Default => "Default",
            Instruct::Specific => "Specific",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String")]
pub enum QuerySource {
    TermOnly,
    WikiSummary,
}

impl FromStr for QuerySource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "termonly" | "term" => Ok(QuerySource::TermOnly),
            "wikisummary" | "wiki" => Ok(QuerySource::WikiSummary),
            other => Err(format!(
                "unknown query source {other:?} (expected term-only|wiki-summary)"
            )),
        }
    }
}

impl TryFrom<String> for QuerySource {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl fmt::Display for QuerySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuerySource::TermOnly => "TermOnly",
            QuerySource::WikiSummary => "WikiSummary",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    pub model_id: String,
    pub instruct: Instruct,
    pub query_source: QuerySource,
    pub top_m: usize,
    pub endpoint: String,
    pub batch_size: usize,
    /// Embedding requests allowed in flight across grammars.
    pub max_in_flight: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            model_id: "Salesforce/SFR-Embedding-Mistral".to_string(),
            instruct: Instruct::Specific,
            query_source: QuerySource::WikiSummary,
            top_m: 20,
            endpoint: "http://localhost:8080/v1/embeddings".to_string(),
            batch_size: 16,
            max_in_flight: 4,
        }
    }
}

impl RerankConfig {
    /// Short name used for report rows and file names.
    pub fn label(&self) -> String {
        let model = self.model_id.rsplit('/').next().unwrap_or(&self.model_id);
        format!("{model}_{}_{}", self.instruct, self.query_source)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("nothing to embed")]
    EmptyInput,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("embedding endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("cannot decode embedding response: {0}")]
    Decode(String),
    #[error("empty embedding response")]
    EmptyResponse,
    #[error("expected {expected} embeddings, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding dimension mismatch: {expected} vs {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains NaN or infinite values")]
    NonFinite,
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("mock embedder has no vector for {0:?}")]
    MockMiss(String),
}

impl Retryable for EmbedError {
    fn is_retryable(&self) -> bool {
        match self {
            EmbedError::Transport(_) => true,
            EmbedError::Status { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::EmptyResponse);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// One embedding request: `inputs` in, one vector per input out, same order.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, model: &str, inputs: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

pub fn wrap_query(instruct: Instruct, text: &str) -> String {
    format!("Instruct: {}\nQuery: {}", instruct.text(), text)
}

/// Embeds `texts` in requests of at most `config.batch_size` inputs.
pub fn embed_batch(
    texts: &[String],
    config: &RerankConfig,
    backend: &dyn EmbeddingBackend,
    is_query: bool,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    let inputs: Vec<String> = if is_query {
        texts
            .iter()
            .map(|t| wrap_query(config.instruct, t))
            .collect()
    } else {
        texts.to_vec()
    };
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(config.batch_size.max(1)) {
        let vectors = backend.embed(&config.model_id, chunk)?;
        if vectors.len() != chunk.len() {
            return Err(EmbedError::CountMismatch {
                expected: chunk.len(),
                got: vectors.len(),
            });
        }
        for v in vectors {
            out.push(EmbeddingVector::new(v)?);
        }
    }
    let dim = out[0].dim();
    if let Some(bad) = out.iter().find(|v| v.dim() != dim) {
        return Err(EmbedError::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("nothing to rerank")]
    EmptyInput,
    #[error("rerank expects a BM25 list, got {0:?}")]
    WrongProvenance(Provenance),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Reorders a BM25 list by cosine similarity to `query_text`.
pub fn rerank(
    input: &ScoredList,
    query_text: &str,
    config: &RerankConfig,
    backend: &dyn EmbeddingBackend,
) -> Result<ScoredList, RerankError> {
    if input.is_empty() {
        return Err(RerankError::EmptyInput);
    }
    if input.provenance != Provenance::Bm25 {
        return Err(RerankError::WrongProvenance(input.provenance));
    }
    let query = embed_batch(&[query_text.to_string()], config, backend, true)?
        .pop()
        .expect("one query vector");
    let texts: Vec<String> = input.paragraphs().map(|p| p.text.clone()).collect();
    let docs = embed_batch(&texts, config, backend, false)?;
    if docs[0].dim() != query.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: query.dim(),
            got: docs[0].dim(),
        }
        .into());
    }
    let mut scored = Vec::with_capacity(docs.len());
    for (entry, doc) in input.entries.iter().zip(&docs) {
        scored.push((entry, cosine(&query, doc)?));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.rank.cmp(&b.0.rank)));
    scored.truncate(config.top_m.max(1));
    Ok(ScoredList::from_ordered(
        Provenance::Reranked,
        scored.into_iter().map(|(e, s)| (e.paragraph.clone(), s)),
    ))
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    index: usize,
    embedding: Vec<f64>,
}

/// Decodes `{ "data": [ { "index", "embedding" } ] }`, ordering by `index`.
pub fn decode_embed_response(body: &str) -> Result<Vec<Vec<f64>>, EmbedError> {
    let mut resp: EmbedResponse =
        serde_json::from_str(body).map_err(|e| EmbedError::Decode(e.to_string()))?;
    if resp.data.is_empty() {
        return Err(EmbedError::EmptyResponse);
    }
    resp.data.sort_by_key(|d| d.index);
    Ok(resp.data.into_iter().map(|d| d.embedding).collect())
}

/// JSON-over-HTTP embedding client with retries.
pub struct HttpEmbeddingBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

pub const EMBED_KEY_ENV: &str = "GRAMRAC_EMBED_KEY";

impl HttpEmbeddingBackend {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            api_key: std::env::var(EMBED_KEY_ENV).ok(),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn send_once(&self, model: &str, inputs: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut req = self.client.post(&self.endpoint).json(&EmbedRequest {
            model,
            input: inputs,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EmbedError::Status {
                status: status.as_u16(),
                body,
            });
        }
        decode_embed_response(&body)
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn embed(&self, model: &str, inputs: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        self.retry.run(|_| self.send_once(model, inputs)).0
    }
}

/// Fixture for [`MockEmbeddingBackend`].
///
/// `vectors` maps an input text to its vector; a wrapped query is also
/// looked up by its bare query text. Texts without an entry fall back to a
/// hashed bag-of-words vector of `hashed_dim` dimensions when that is set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MockEmbedFixture {
    pub vectors: HashMap<String, Vec<f64>>,
    pub hashed_dim: Option<usize>,
}

/// Offline embedder; records every request it receives.
#[derive(Debug, Default)]
pub struct MockEmbeddingBackend {
    fixture: MockEmbedFixture,
    requests: Mutex<Vec<Vec<String>>>,
}

fn hashed_embedding(text: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(2);
    let mut v = vec![0.0; dim];
    // constant component keeps token-free texts away from the zero vector
    v[0] = 1.0;
    for tok in tokenize(text).tokens {
        let h = Sha256::digest(tok.as_bytes());
        let slot = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as usize;
        v[1 + slot % (dim - 1)] += 1.0;
    }
    v
}

impl MockEmbeddingBackend {
    pub fn new(fixture: MockEmbedFixture) -> Self {
        Self {
            fixture,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn hashed(dim: usize) -> Self {
        Self::new(MockEmbedFixture {
            vectors: HashMap::new(),
            hashed_dim: Some(dim),
        })
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let fixture = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(fixture))
    }

    /// Every request so far, in the order received.
    pub fn requests(&self) -> Vec<Vec<String>> {
        self.requests.lock().expect("mock lock").clone()
    }

    fn lookup(&self, input: &str) -> Result<Vec<f64>, EmbedError> {
        if let Some(v) = self.fixture.vectors.get(input) {
            return Ok(v.clone());
        }
        if let Some((_, bare)) = input
            .strip_prefix("Instruct: ")
            .and_then(|rest| rest.split_once("\nQuery: "))
        {
            if let Some(v) = self.fixture.vectors.get(bare) {
                return Ok(v.clone());
            }
        }
        match self.fixture.hashed_dim {
            Some(dim) => Ok(hashed_embedding(input, dim)),
            None => Err(EmbedError::MockMiss(input.chars().take(60).collect())),
        }
    }
}

impl EmbeddingBackend for MockEmbeddingBackend {
    fn embed(&self, _model: &str, inputs: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        self.requests
            .lock()
            .expect("mock lock")
            .push(inputs.to_vec());
        inputs.iter().map(|t| self.lookup(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Paragraph;

    fn v(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec()).unwrap()
    }

    fn one_hot(i: usize, dim: usize) -> Vec<f64> {
        let mut x = vec![0.0; dim];
        x[i] = 1.0;
        x
    }

    fn bm25_list(n: usize) -> ScoredList {
        ScoredList::from_ordered(
            Provenance::Bm25,
            (0..n).map(|i| {
                (
                    Paragraph {
                        doc_id: "g".into(),
                        index: i,
                        text: format!("paragraph {i}"),
                    },
                    (n - i) as f64,
                )
            }),
        )
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 2.0, 2.0]), &v(&[2.0, 1.0, 2.0])).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(EmbedError::ZeroNorm)
        );
        assert!(cosine(&v(&[1.0]), &v(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn vectors_reject_non_finite() {
        assert_eq!(
            EmbeddingVector::new(vec![f64::NAN]),
            Err(EmbedError::NonFinite)
        );
        assert_eq!(EmbeddingVector::new(vec![]), Err(EmbedError::EmptyResponse));
    }

    #[test]
    fn query_wrapping_and_batching() {
        let mock = MockEmbeddingBackend::hashed(8);
        let cfg = RerankConfig {
            batch_size: 16,
            ..RerankConfig::default()
        };
        embed_batch(&["word order".into()], &cfg, &mock, true).unwrap();
        let texts: Vec<String> = (0..50).map(|i| format!("p{i}")).collect();
        let out = embed_batch(&texts, &cfg, &mock, false).unwrap();
        assert_eq!(out.len(), 50);
        let reqs = mock.requests();
        assert_eq!(reqs.len(), 1 + 4);
        assert_eq!(
            reqs[0][0],
            format!("Instruct: {SPECIFIC_INSTRUCT}\nQuery: word order")
        );
        let sizes: Vec<usize> = reqs[1..].iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![16, 16, 16, 2]);
        let flat: Vec<String> = reqs[1..].concat();
        assert_eq!(flat, texts);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mock = MockEmbeddingBackend::hashed(8);
        assert_eq!(
            embed_batch(&[], &RerankConfig::default(), &mock, false),
            Err(EmbedError::EmptyInput)
        );
    }

    #[test]
    fn one_hot_query_selects_its_paragraph() {
        let mut vectors = HashMap::new();
        for i in 0..6 {
            vectors.insert(format!("paragraph {i}"), one_hot(i, 6));
        }
        vectors.insert("q".to_string(), one_hot(3, 6));
        let mock = MockEmbeddingBackend::new(MockEmbedFixture {
            vectors,
            hashed_dim: None,
        });
        let out = rerank(&bm25_list(6), "q", &RerankConfig::default(), &mock).unwrap();
        assert_eq!(out.entries[0].paragraph.index, 3);
        assert_eq!(out.provenance, Provenance::Reranked);
        // the remaining ties keep BM25 order
        let rest: Vec<_> = out.entries[1..].iter().map(|e| e.paragraph.index).collect();
        assert_eq!(rest, vec![0, 1, 2, 4, 5]);
    }

    #[test]
    fn identical_embeddings_preserve_bm25_order() {
        let mut vectors = HashMap::new();
        for i in 0..5 {
            vectors.insert(format!("paragraph {i}"), vec![1.0, 1.0]);
        }
        vectors.insert("q".into(), vec![1.0, 0.0]);
        let mock = MockEmbeddingBackend::new(MockEmbedFixture {
            vectors,
            hashed_dim: None,
        });
        let cfg = RerankConfig {
            top_m: 3,
            ..RerankConfig::default()
        };
        let out = rerank(&bm25_list(5), "q", &cfg, &mock).unwrap();
        let idx: Vec<_> = out.entries.iter().map(|e| e.paragraph.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn output_independent_of_batch_size() {
        let mock = MockEmbeddingBackend::hashed(16);
        let input = bm25_list(30);
        let run = |batch_size| {
            let cfg = RerankConfig {
                batch_size,
                top_m: 30,
                ..RerankConfig::default()
            };
            rerank(&input, "paragraph 7 order", &cfg, &mock).unwrap()
        };
        assert_eq!(run(1), run(16));
    }

    #[test]
    fn rerank_rejects_empty_and_human_lists() {
        let mock = MockEmbeddingBackend::hashed(4);
        let empty = ScoredList::from_ordered(Provenance::Bm25, Vec::new());
        assert!(matches!(
            rerank(&empty, "q", &RerankConfig::default(), &mock),
            Err(RerankError::EmptyInput)
        ));
        let human = ScoredList::human(vec![Paragraph {
            doc_id: "g".into(),
            index: 0,
            text: "x".into(),
        }]);
        assert!(matches!(
            rerank(&human, "q", &RerankConfig::default(), &mock),
            Err(RerankError::WrongProvenance(Provenance::Human))
        ));
    }

    #[test]
    fn response_decoding_sorts_by_index() {
        let body =
            r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#;
        assert_eq!(
            decode_embed_response(body).unwrap(),
            vec![vec![1.0, 0.0], vec![0.0, 1.0]]
        );
        assert_eq!(
            decode_embed_response(r#"{"data":[]}"#),
            Err(EmbedError::EmptyResponse)
        );
        assert!(matches!(
            decode_embed_response("nope"),
            Err(EmbedError::Decode(_))
        ));
    }

    #[test]
    fn retry_classification() {
        assert!(EmbedError::Transport("x".into()).is_retryable());
        assert!(EmbedError::Status {
            status: 503,
            body: String::new()
        }
        .is_retryable());
        assert!(!EmbedError::Status {
            status: 400,
            body: String::new()
        }
        .is_retryable());
        assert!(!EmbedError::Decode("x".into()).is_retryable());
    }

    #[test]
    fn labels() {
        assert_eq!(
            RerankConfig::default().label(),
            "SFR-Embedding-Mistral_Specific_WikiSummary"
        );
        assert_eq!("wiki-summary".parse(), Ok(QuerySource::WikiSummary));
        assert_eq!("TermOnly".parse(), Ok(QuerySource::TermOnly));
    }

    proptest::proptest! {
        #[test]
        fn cosine_is_symmetric(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let (a, b) = (v(&a), v(&b));
            if let (Ok(x), Ok(y)) = (cosine(&a, &b), cosine(&b, &a)) {
                proptest::prop_assert!((x - y).abs() < 1e-12);
                proptest::prop_assert!((-1.0..=1.0).contains(&x));
            }
        }
    }
}
