//! Retrieval-augmented classification of typological features from
//! descriptive grammars.
//!
//! The pipeline splits a grammar into paragraphs ([`corpus`]), ranks them
//! with BM25 ([`retrieval`]), optionally reorders them with an embedding
//! model ([`rerank`]), builds a feature prompt ([`prompt`]), asks a chat
//! model ([`llmclient`]) and parses the answer ([`features`]). [`metrics`]
//! and [`pipeline`] cover evaluation; [`benchio`] and [`sampling`] handle
//! benchmark data.

pub mod benchio;
pub mod corpus;
pub mod features;
pub mod llmclient;
pub mod metrics;
pub mod pipeline;
pub mod pool;
pub mod prompt;
pub mod rerank;
pub mod retrieval;
pub mod retry;
pub mod sampling;

pub use benchio::{RagGoldRecord, RerankerBenchmark, RerankerRecord};
pub use corpus::{GrammarDoc, LanguageMeta, Macroarea, Paragraph};
pub use features::{Answer, AnswerValue, FeatureId, FeatureKind, FeatureSpec};
pub use llmclient::{LlmBackend, LlmExchange};
pub use metrics::{F1Report, GainVariant, JudgedRanking, PredictionSet, RunStats};
pub use pipeline::{RunConfig, RunMode, RunReport};
pub use prompt::{AssembledPrompt, PromptConfig};
pub use rerank::{EmbeddingVector, Instruct, QuerySource, RerankConfig};
pub use retrieval::{Bm25Params, Provenance, ScoredList, TokenizedText};
