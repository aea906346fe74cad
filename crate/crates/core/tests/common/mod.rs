#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use gramrac_core::benchio::{load_rag_gold, RagGoldRecord};
use gramrac_core::corpus::{load_corpus, GrammarDoc};
use gramrac_core::features::{builtin_features, FeatureSpec};
use gramrac_core::llmclient::{MockChatTransport, MockLlmFixture};
use gramrac_core::pipeline::{run_rag, Backends, RunConfig, RunMode, RunOptions, RunOutcome};
use gramrac_core::rerank::MockEmbeddingBackend;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn e2e_dir() -> PathBuf {
    data_dir().join("e2e")
}

pub struct Fixture {
    pub corpus: Vec<GrammarDoc>,
    pub gold: Vec<RagGoldRecord>,
    pub features: Vec<FeatureSpec>,
    pub llm: MockLlmFixture,
}

pub fn fixture() -> Fixture {
    let dir = e2e_dir();
    Fixture {
        corpus: load_corpus(&dir.join("corpus")).expect("fixture corpus"),
        gold: load_rag_gold(&dir.join("gold.jsonl")).expect("fixture gold"),
        features: builtin_features(),
        llm: MockLlmFixture::load(&dir.join("mock_llm.json")).expect("mock llm fixture"),
    }
}

pub fn embedder() -> MockEmbeddingBackend {
    MockEmbeddingBackend::from_file(&e2e_dir().join("mock_embed.json")).expect("mock embed fixture")
}

pub fn config(mode: RunMode) -> RunConfig {
    let mut c = RunConfig {
        run_id: mode.as_str().to_string(),
        mode,
        ..RunConfig::default()
    };
    c.llm.backoff_base = Duration::ZERO;
    c
}

pub fn run(
    fx: &Fixture,
    mode: RunMode,
    root: &Path,
    chat: &MockChatTransport,
    options: RunOptions,
) -> RunOutcome {
    let embed = embedder();
    run_rag(
        &fx.corpus,
        &fx.gold,
        &fx.features,
        &config(mode),
        &Backends {
            chat,
            embed: Some(&embed),
        },
        root,
        options,
    )
    .expect("run succeeds")
}

pub fn golden_path(mode: RunMode) -> PathBuf {
    e2e_dir()
        .join("golden")
        .join(format!("{}.report.json", mode.as_str()))
}

/// Compares against the committed golden report. Set GRAMRAC_UPDATE_GOLDEN=1
/// to rewrite the golden files after an intended change.
pub fn matches_golden(mode: RunMode, produced: &str) -> bool {
    let path = golden_path(mode);
    if std::env::var_os("GRAMRAC_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, produced).unwrap();
    }
    std::fs::read_to_string(&path)
        .map(|g| g == produced)
        .unwrap_or(false)
}
