//! Experiment orchestration: RAG classification runs, reranker evaluation
//! and report tables.
//!
//! A run writes everything under `<runs_root>/<run_id>/`:
//!
//! ```text
//! config.json        configuration snapshot
//! exchanges.jsonl    one line per chat request, appended as responses arrive
//! predictions.jsonl  parsed and scored items
//! metrics.csv        per-feature F1 summary
//! report.json        the full run report
//! prompts/           prompt dumps when enabled
//! ```
//!
//! Re-running with the same run id skips every (doc, feature, run) key that
//! already has a successful exchange.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::benchio::{extract_pages, GoldJson, RagGoldRecord, RerankerBenchmark};
use crate::corpus::{split_paragraphs, GrammarDoc, Paragraph};
use crate::features::{
    builtin_feature, parse_answer, AnswerValue, FeatureId, FeatureKind, FeatureSpec, NO_MENTION,
    POLAR_QUESTION_LABELS,
};
use crate::llmclient::{complete, ChatTransport, LlmBackend, LlmExchange};
use crate::metrics::{
    f1_report, mean_curve, mean_defined, ndcg_at_k, ndcg_curve, run_stats, GainVariant,
    JudgedRanking, NdcgCurve, Predicted, PredictionSet, RunStats,
};
use crate::pool::bounded_map;
use crate::prompt::{assemble, PromptConfig, PromptMode};
use crate::rerank::{rerank, EmbeddingBackend, QuerySource, RerankConfig};
use crate::retrieval::{retrieve_top_k, Bm25Params, Provenance, ScoredList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Baseline,
    Bm25,
    Bm25Cot,
    Rerank,
    RerankCot,
    Human,
    HumanCot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evidence {
    None,
    Bm25,
    Rerank,
    Human,
}

impl RunMode {
    pub const ALL: [RunMode; 7] = [
        RunMode::Baseline,
        RunMode::Bm25,
        RunMode::Bm25Cot,
        RunMode::Rerank,
        RunMode::RerankCot,
        RunMode::Human,
        RunMode::HumanCot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Baseline => "baseline",
            RunMode::Bm25 => "bm25",
            RunMode::Bm25Cot => "bm25_cot",
            RunMode::Rerank => "rerank",
            RunMode::RerankCot => "rerank_cot",
            RunMode::Human => "human",
            RunMode::HumanCot => "human_cot",
        }
    }

    /// Column heading used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            RunMode::Baseline => "Baseline",
            RunMode::Bm25 => "BM25",
            RunMode::Bm25Cot => "BM25+CoT",
            RunMode::Rerank => "Reranker",
            RunMode::RerankCot => "Rer.+CoT",
            RunMode::Human => "Human pages",
            RunMode::HumanCot => "Human+CoT",
        }
    }

    pub fn use_cot(self) -> bool {
        matches!(
            self,
            RunMode::Bm25Cot | RunMode::RerankCot | RunMode::HumanCot
        )
    }

    pub fn evidence(self) -> Evidence {
        match self {
            RunMode::Baseline => Evidence::None,
            RunMode::Bm25 | RunMode::Bm25Cot => Evidence::Bm25,
            RunMode::Rerank | RunMode::RerankCot => Evidence::Rerank,
            RunMode::Human | RunMode::HumanCot => Evidence::Human,
        }
    }

    /// Modes that only run on items whose grammar holds enough information.
    pub fn sufficient_only(self) -> bool {
        matches!(self, RunMode::Baseline | RunMode::Human | RunMode::HumanCot)
    }

    pub fn default_n_runs(self) -> usize {
        if self == RunMode::Baseline {
            10
        } else {
            1
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let squashed: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        RunMode::ALL
            .into_iter()
            .find(|m| m.as_str().replace('_', "") == squashed)
            .ok_or_else(|| {
                format!("unknown mode {s:?} (expected baseline|bm25|bm25_cot|rerank|rerank_cot|human|human_cot)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_id: String,
    pub mode: RunMode,
    pub k_retrieve: usize,
    pub top_m: usize,
    /// Defaults to 10 for the baseline and 1 otherwise.
    pub n_runs: Option<usize>,
    /// Empty means all four features.
    pub features: Vec<FeatureId>,
    pub seed: u64,
    pub bm25_query: QuerySource,
    pub bm25: Bm25Params,
    pub include_wiki: bool,
    pub allow_no_mention: bool,
    pub dump_prompts: bool,
    pub llm: LlmBackend,
    pub rerank: RerankConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".to_string(),
            mode: RunMode::Bm25,
            k_retrieve: 50,
            top_m: 20,
            n_runs: None,
            features: Vec::new(),
            seed: 0,
            bm25_query: QuerySource::WikiSummary,
            bm25: Bm25Params::default(),
            include_wiki: true,
            allow_no_mention: false,
            dump_prompts: false,
            llm: LlmBackend::default(),
            rerank: RerankConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn n_runs(&self) -> usize {
        self.n_runs.unwrap_or_else(|| self.mode.default_n_runs())
    }

    pub fn feature_ids(&self) -> Vec<FeatureId> {
        FeatureId::ALL
            .into_iter()
            .filter(|f| self.features.is_empty() || self.features.contains(f))
            .collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            || self.run_id.starts_with('.')
        {
            return bad("run_id must be non-empty and use only [A-Za-z0-9._-]");
        }
        if self.n_runs() == 0 {
            return bad("n_runs must be at least 1");
        }
        if self.k_retrieve == 0 || self.top_m == 0 {
            return bad("k_retrieve and top_m must be at least 1");
        }
        self.llm
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("run {run_id} already exists with a different configuration")]
    ConfigMismatch { run_id: String },
    #[error("no report for run {0:?}")]
    MissingRun(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Key of one classification request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemKey {
    pub doc_id: String,
    pub feature_id: FeatureId,
    pub run_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeLine {
    pub doc_id: String,
    pub run_index: usize,
    #[serde(flatten)]
    pub exchange: LlmExchange,
}

impl ExchangeLine {
    pub fn key(&self) -> ItemKey {
        ItemKey {
            doc_id: self.doc_id.clone(),
            feature_id: self.exchange.feature_id,
            run_index: self.run_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub doc_id: String,
    pub feature_id: FeatureId,
    pub run_index: usize,
    pub gold: Value,
    pub prediction: Option<AnswerValue>,
    pub error: Option<String>,
    pub correct: bool,
    pub prompt_hash: Option<String>,
    pub n_paragraphs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub feature: String,
    pub config: String,
    pub n_items: usize,
    pub f1_micro: RunStats,
    pub f1_macro: RunStats,
    pub f1_weighted: RunStats,
    pub accuracy: RunStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub mode: RunMode,
    pub n_runs: usize,
    pub n_eligible: usize,
    pub items: Vec<ItemRecord>,
    pub metrics: Vec<MetricRow>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub struct Backends<'a> {
    pub chat: &'a dyn ChatTransport,
    pub embed: Option<&'a dyn EmbeddingBackend>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Stop after this many new chat requests, leaving the run resumable.
    pub stop_after_calls: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    /// `None` when the run stopped early.
    pub report: Option<RunReport>,
    pub new_calls: usize,
    pub skipped_completed: usize,
    pub backend_errors: usize,
}

pub const CONFIG_FILE: &str = "config.json";
pub const EXCHANGES_FILE: &str = "exchanges.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PROMPTS_DIR: &str = "prompts";

pub fn query_text(spec: &FeatureSpec, source: QuerySource) -> &str {
    match source {
        QuerySource::TermOnly => &spec.query_term,
        QuerySource::WikiSummary => &spec.wiki_summary,
    }
}

/// Reads exchanges, the last line per key winning.
pub fn load_exchanges(path: &Path) -> Result<BTreeMap<ItemKey, LlmExchange>, PipelineError> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let file = File::open(path).map_err(io_err(path))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ExchangeLine>(&line) {
            Ok(x) => {
                out.insert(x.key(), x.exchange);
            }
            // a torn final line from an interrupted write is dropped
            Err(e) if e.is_eof() => {
                log::warn!("{}: ignoring truncated line {}", path.display(), i + 1)
            }
            Err(e) => {
                return Err(PipelineError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

struct Unit<'a> {
    gold: &'a RagGoldRecord,
    doc: Option<&'a GrammarDoc>,
    spec: &'a FeatureSpec,
    pending: Vec<usize>,
}

fn gather_evidence(
    unit: &Unit<'_>,
    config: &RunConfig,
    embed: Option<&dyn EmbeddingBackend>,
) -> Result<Option<ScoredList>, String> {
    let doc = unit
        .doc
        .ok_or_else(|| format!("document {} not in corpus", unit.gold.doc_id))?;
    let evidence = config.mode.evidence();
    if evidence == Evidence::None {
        return Ok(None);
    }
    if evidence == Evidence::Human {
        let pages = unit
            .gold
            .relevant_pages
            .as_deref()
            .filter(|p| !p.is_empty())
            .ok_or("no relevant pages annotated")?;
        return extract_pages(doc, pages)
            .map(Some)
            .map_err(|e| e.to_string());
    }
    let paragraphs: Vec<Paragraph> = split_paragraphs(doc);
    let bm25 = retrieve_top_k(
        &paragraphs,
        query_text(unit.spec, config.bm25_query),
        config.k_retrieve,
        config.bm25,
    )
    .map_err(|e| e.to_string())?;
    if evidence == Evidence::Bm25 {
        return Ok(Some(bm25));
    }
    let backend = embed.ok_or("no embedding backend configured")?;
    let rcfg = RerankConfig {
        top_m: config.top_m,
        ..config.rerank.clone()
    };
    rerank(
        &bm25,
        query_text(unit.spec, rcfg.query_source),
        &rcfg,
        backend,
    )
    .map(Some)
    .map_err(|e| e.to_string())
}

/// Runs one configuration over the gold items, resuming any earlier
/// partial run with the same id.
pub fn run_rag(
    corpus: &[GrammarDoc],
    gold: &[RagGoldRecord],
    features: &[FeatureSpec],
    config: &RunConfig,
    backends: &Backends<'_>,
    runs_root: &Path,
    options: RunOptions,
) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    if config.mode.evidence() == Evidence::Rerank && backends.embed.is_none() {
        return Err(PipelineError::Config(
            "rerank modes need an embedding backend".into(),
        ));
    }
    let run_dir = runs_root.join(&config.run_id);
    std::fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
    let config_path = run_dir.join(CONFIG_FILE);
    let snapshot = serde_json::to_string_pretty(config).expect("config serializes") + "\n";
    if config_path.exists() {
        let existing = std::fs::read_to_string(&config_path).map_err(io_err(&config_path))?;
        if existing != snapshot {
            return Err(PipelineError::ConfigMismatch {
                run_id: config.run_id.clone(),
            });
        }
    } else {
        write_file(&config_path, snapshot.as_bytes())?;
    }

    let docs: HashMap<&str, &GrammarDoc> = corpus.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let specs: HashMap<FeatureId, &FeatureSpec> =
        features.iter().map(|s| (s.feature_id, s)).collect();
    let wanted = config.feature_ids();
    let n_runs = config.n_runs();
    let eligible: Vec<&RagGoldRecord> = gold
        .iter()
        .filter(|g| wanted.contains(&g.feature_id))
        .filter(|g| g.sufficient_info || !config.mode.sufficient_only())
        .collect();
    for g in &eligible {
        if !specs.contains_key(&g.feature_id) {
            return Err(PipelineError::Data(format!(
                "no feature spec for {}",
                g.feature_id
            )));
        }
    }

    let exchanges_path = run_dir.join(EXCHANGES_FILE);
    let done = load_exchanges(&exchanges_path)?;
    let is_done = |k: &ItemKey| done.get(k).is_some_and(LlmExchange::is_ok);
    let mut skipped = 0;
    let units: Vec<Unit<'_>> = eligible
        .iter()
        .map(|g| {
            let pending: Vec<usize> = (0..n_runs)
                .filter(|&r| {
                    let k = ItemKey {
                        doc_id: g.doc_id.clone(),
                        feature_id: g.feature_id,
                        run_index: r,
                    };
                    !is_done(&k)
                })
                .collect();
            skipped += n_runs - pending.len();
            Unit {
                gold: g,
                doc: docs.get(g.doc_id.as_str()).copied(),
                spec: specs[&g.feature_id],
                pending,
            }
        })
        .collect();

    let log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&exchanges_path)
        .map_err(io_err(&exchanges_path))?;
    let log_file = Mutex::new(log_file);
    let calls = AtomicUsize::new(0);
    let stopped = AtomicBool::new(false);
    let prompt_cfg = PromptConfig {
        mode: if config.mode.evidence() == Evidence::None {
            PromptMode::Baseline
        } else {
            PromptMode::Rag
        },
        use_cot: config.mode.use_cot(),
        include_wiki: config.include_wiki,
    };

    let active: Vec<&Unit<'_>> = units.iter().filter(|u| !u.pending.is_empty()).collect();
    let results = bounded_map(&active, config.llm.max_in_flight, |unit| {
        let evidence = gather_evidence(unit, config, backends.embed)?;
        let prompt = assemble(
            unit.spec,
            &unit.doc.expect("checked").meta.language_name,
            evidence.as_ref(),
            prompt_cfg,
        )
        .map_err(|e| e.to_string())?;
        for &r in &unit.pending {
            if let Some(limit) = options.stop_after_calls {
                if calls.fetch_add(1, Ordering::SeqCst) >= limit {
                    stopped.store(true, Ordering::SeqCst);
                    break;
                }
            } else {
                calls.fetch_add(1, Ordering::SeqCst);
            }
            let exchange = complete(&prompt, &config.llm, backends.chat);
            let line = ExchangeLine {
                doc_id: unit.gold.doc_id.clone(),
                run_index: r,
                exchange,
            };
            let mut text = serde_json::to_string(&line).expect("exchange serializes");
            text.push('\n');
            let mut f = log_file.lock().expect("log lock");
            f.write_all(text.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| format!("cannot persist exchange: {e}"))?;
        }
        Ok::<_, String>(prompt)
    });

    let mut evidence_errors: HashMap<(String, FeatureId), String> = HashMap::new();
    let mut prompts = Vec::new();
    for (unit, res) in active.iter().zip(results) {
        match res {
            Ok(p) => prompts.push((unit.gold.doc_id.clone(), unit.gold.feature_id, p.text)),
            Err(e) => {
                log::warn!("{} / {}: {e}", unit.gold.doc_id, unit.gold.feature_id);
                evidence_errors.insert((unit.gold.doc_id.clone(), unit.gold.feature_id), e);
            }
        }
    }
    if config.dump_prompts {
        let dir = run_dir.join(PROMPTS_DIR);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (doc_id, fid, text) in &prompts {
            write_file(&dir.join(format!("{doc_id}.{fid}.txt")), text.as_bytes())?;
        }
    }

    let limit_hit = stopped.load(Ordering::SeqCst);
    let new_calls = match options.stop_after_calls {
        Some(limit) => calls.load(Ordering::SeqCst).min(limit),
        None => calls.load(Ordering::SeqCst),
    };
    let exchanges = load_exchanges(&exchanges_path)?;
    let backend_errors = exchanges.values().filter(|x| !x.is_ok()).count();
    if limit_hit {
        return Ok(RunOutcome {
            run_dir,
            report: None,
            new_calls,
            skipped_completed: skipped,
            backend_errors,
        });
    }

    let report = build_report(config, &eligible, &specs, &exchanges, &evidence_errors);
    write_report_files(&run_dir, &report)?;
    Ok(RunOutcome {
        run_dir,
        report: Some(report),
        new_calls,
        skipped_completed: skipped,
        backend_errors,
    })
}

fn gold_class(v: &AnswerValue) -> String {
    match v {
        AnswerValue::Label(l) => l.clone(),
        AnswerValue::NoMention => NO_MENTION.to_string(),
        AnswerValue::Vector(v) => v.iter().map(u8::to_string).collect(),
    }
}

/// Builds the report from persisted exchanges only, so identical
/// exchange logs give identical reports.
pub fn build_report(
    config: &RunConfig,
    eligible: &[&RagGoldRecord],
    specs: &HashMap<FeatureId, &FeatureSpec>,
    exchanges: &BTreeMap<ItemKey, LlmExchange>,
    evidence_errors: &HashMap<(String, FeatureId), String>,
) -> RunReport {
    let n_runs = config.n_runs();
    let mut items = Vec::with_capacity(eligible.len() * n_runs);
    for g in eligible {
        let spec = specs[&g.feature_id];
        for r in 0..n_runs {
            let key = ItemKey {
                doc_id: g.doc_id.clone(),
                feature_id: g.feature_id,
                run_index: r,
            };
            let gold_json = serde_json::to_value(GoldJson(&g.gold_value)).expect("gold serializes");
            let mut rec = ItemRecord {
                doc_id: g.doc_id.clone(),
                feature_id: g.feature_id,
                run_index: r,
                gold: gold_json,
                prediction: None,
                error: None,
                correct: false,
                prompt_hash: None,
                n_paragraphs: None,
            };
            match exchanges.get(&key) {
                Some(x) => {
                    rec.prompt_hash = Some(x.prompt_hash.clone());
                    rec.n_paragraphs = Some(x.n_paragraphs);
                    match &x.backend_error {
                        Some(e) => rec.error = Some(format!("backend: {e}")),
                        None => match parse_answer(&x.response_text, spec, config.allow_no_mention)
                        {
                            Ok(a) => {
                                rec.correct = a.value == g.gold_value;
                                rec.prediction = Some(a.value);
                            }
                            Err(e) => rec.error = Some(format!("parse: {e}")),
                        },
                    }
                }
                None => {
                    let e = evidence_errors
                        .get(&(g.doc_id.clone(), g.feature_id))
                        .cloned()
                        .unwrap_or_else(|| "no exchange recorded".to_string());
                    rec.error = Some(format!("evidence: {e}"));
                }
            }
            items.push(rec);
        }
    }
    let metrics = metric_rows(
        config.mode.as_str(),
        &config.feature_ids(),
        specs,
        eligible,
        &items,
        n_runs,
    );
    RunReport {
        run_id: config.run_id.clone(),
        mode: config.mode,
        n_runs,
        n_eligible: eligible.len(),
        items,
        metrics,
    }
}

fn stats_row(feature: String, config: &str, sets: &[PredictionSet]) -> Option<MetricRow> {
    let reports: Vec<_> = sets.iter().filter_map(|s| f1_report(s).ok()).collect();
    if reports.is_empty() {
        return None;
    }
    let col = |f: fn(&crate::metrics::F1Report) -> f64| {
        run_stats(&reports.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
    };
    Some(MetricRow {
        feature,
        config: config.to_string(),
        n_items: sets[0].items.len(),
        f1_micro: col(|r| r.micro),
        f1_macro: col(|r| r.macro_f1),
        f1_weighted: col(|r| r.weighted),
        accuracy: col(|r| r.accuracy),
    })
}

fn metric_rows(
    config_name: &str,
    features: &[FeatureId],
    specs: &HashMap<FeatureId, &FeatureSpec>,
    eligible: &[&RagGoldRecord],
    items: &[ItemRecord],
    n_runs: usize,
) -> Vec<MetricRow> {
    let gold_of: HashMap<(&str, FeatureId), &AnswerValue> = eligible
        .iter()
        .map(|g| ((g.doc_id.as_str(), g.feature_id), &g.gold_value))
        .collect();
    let mut rows = Vec::new();
    for &fid in features {
        let spec = match specs.get(&fid) {
            Some(s) => s,
            None => continue,
        };
        let of_feature: Vec<&ItemRecord> = items.iter().filter(|i| i.feature_id == fid).collect();
        if of_feature.is_empty() {
            continue;
        }
        match spec.kind {
            FeatureKind::SingleLabel => {
                let mut sets: Vec<PredictionSet> = (0..n_runs)
                    .map(|_| PredictionSet::new(spec.label_domain.clone()))
                    .collect();
                for it in &of_feature {
                    let gold = gold_class(gold_of[&(it.doc_id.as_str(), fid)]);
                    let pred = match &it.prediction {
                        Some(v) => Predicted::Label(gold_class(v)),
                        None => Predicted::Error,
                    };
                    sets[it.run_index].push(gold, pred);
                }
                rows.extend(stats_row(fid.as_str().to_string(), config_name, &sets));
            }
            FeatureKind::BinaryVector7 => {
                for (li, label) in POLAR_QUESTION_LABELS.iter().enumerate() {
                    let mut sets: Vec<PredictionSet> = (0..n_runs)
                        .map(|_| PredictionSet::new(vec!["1".into(), "0".into()]))
                        .collect();
                    for it in &of_feature {
                        let gold = match gold_of[&(it.doc_id.as_str(), fid)] {
                            AnswerValue::Vector(v) => v[li],
                            _ => continue,
                        };
                        let pred = match &it.prediction {
                            Some(AnswerValue::Vector(v)) => Predicted::Label(v[li].to_string()),
                            _ => Predicted::Error,
                        };
                        sets[it.run_index].push(gold.to_string(), pred);
                    }
                    rows.extend(stats_row(format!("{fid}/{label}"), config_name, &sets));
                }
            }
        }
    }
    rows
}

pub const METRICS_HEADER: &str = "feature,config,f1_micro,f1_macro,f1_weighted,accuracy,mean,std";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Metric rows as CSV. `mean` and `std` describe micro F1 across runs.
pub fn metrics_csv(rows: &[MetricRow], config_label: Option<&str>) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            csv_field(&r.feature),
            csv_field(config_label.unwrap_or(&r.config)),
            r.f1_micro.mean,
            r.f1_macro.mean,
            r.f1_weighted.mean,
            r.accuracy.mean,
            r.f1_micro.mean,
            r.f1_micro.sample_std,
        ));
    }
    out
}

fn write_report_files(run_dir: &Path, report: &RunReport) -> Result<(), PipelineError> {
    let mut preds = String::new();
    for it in &report.items {
        preds.push_str(&serde_json::to_string(it).expect("item serializes"));
        preds.push('\n');
    }
    write_file(&run_dir.join(PREDICTIONS_FILE), preds.as_bytes())?;
    write_file(
        &run_dir.join(METRICS_FILE),
        metrics_csv(&report.metrics, None).as_bytes(),
    )?;
    write_file(&run_dir.join(REPORT_FILE), report.to_json().as_bytes())
}

pub fn load_report(runs_root: &Path, run_id: &str) -> Result<RunReport, PipelineError> {
    let path = runs_root.join(run_id).join(REPORT_FILE);
    if !path.exists() {
        return Err(PipelineError::MissingRun(run_id.to_string()));
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

/// A feature × configuration table over several runs: a long-form CSV and
/// a markdown table with micro/macro/weighted rows per feature.
pub struct ConsolidatedReport {
    pub csv: String,
    pub markdown: String,
}

fn feature_title(key: &str) -> String {
    match key.split_once('/') {
        Some((_, label)) => format!("{} ({label})", FeatureId::Wals116AStar.display_name()),
        None => key
            .parse::<FeatureId>()
            .map(|f| f.display_name().to_string())
            .unwrap_or_else(|_| key.to_string()),
    }
}

pub fn consolidate(reports: &[RunReport]) -> ConsolidatedReport {
    let mut titles: Vec<String> = reports.iter().map(|r| r.mode.title().to_string()).collect();
    for i in 0..titles.len() {
        if titles.iter().filter(|t| **t == titles[i]).count() > 1 {
            titles[i] = format!("{} [{}]", reports[i].mode.title(), reports[i].run_id);
        }
    }
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for (r, t) in reports.iter().zip(&titles) {
        csv.push_str(
            metrics_csv(&r.metrics, Some(t))
                .split_once('\n')
                .expect("header")
                .1,
        );
    }

    let mut features: Vec<&str> = Vec::new();
    for r in reports {
        for m in &r.metrics {
            if !features.contains(&m.feature.as_str()) {
                features.push(&m.feature);
            }
        }
    }
    let mut md = String::from("| Feature | F1 |");
    for t in &titles {
        md.push_str(&format!(" {t} |"));
    }
    md.push_str("\n|---|---|");
    md.push_str(&"---|".repeat(titles.len()));
    md.push('\n');
    for f in features {
        for (name, pick) in [
            (
                "micro",
                (|m: &MetricRow| m.f1_micro) as fn(&MetricRow) -> RunStats,
            ),
            ("macro", |m: &MetricRow| m.f1_macro),
            ("weighted", |m: &MetricRow| m.f1_weighted),
        ] {
            md.push_str(&format!("| {} | {name} |", feature_title(f)));
            for r in reports {
                let cell = r
                    .metrics
                    .iter()
                    .find(|m| m.feature == f)
                    .map(|m| pick(m).to_string())
                    .unwrap_or_else(|| "n/a".to_string());
                md.push_str(&format!(" {cell} |"));
            }
            md.push('\n');
        }
    }
    ConsolidatedReport { csv, markdown: md }
}

/// NDCG results of one ranking source on the reranker benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankerEval {
    pub label: String,
    pub per_grammar: Vec<(String, Option<f64>)>,
    pub curves: Vec<(String, NdcgCurve)>,
    pub mean_at_k: Option<f64>,
    pub mean_curve: NdcgCurve,
    pub error: Option<String>,
}

fn eval_orderings(
    label: String,
    rankings: Vec<JudgedRanking>,
    k: usize,
    gain: GainVariant,
) -> RerankerEval {
    let k_max = rankings
        .iter()
        .map(|r| r.relevances_in_rank_order.len())
        .max()
        .unwrap_or(0);
    let per_grammar: Vec<(String, Option<f64>)> = rankings
        .iter()
        .map(|r| (r.grammar_id.clone(), ndcg_at_k(r, k, gain)))
        .collect();
    for (g, v) in &per_grammar {
        if v.is_none() {
            log::warn!(
                "{label}: NDCG undefined for {g} (no relevant paragraphs); excluded from mean"
            );
        }
    }
    let curves: Vec<(String, NdcgCurve)> = rankings
        .iter()
        .map(|r| (r.grammar_id.clone(), ndcg_curve(r, k_max, gain)))
        .collect();
    let only: Vec<NdcgCurve> = curves.iter().map(|(_, c)| c.clone()).collect();
    RerankerEval {
        mean_at_k: mean_defined(per_grammar.iter().map(|(_, v)| *v)),
        mean_curve: mean_curve(&only),
        per_grammar,
        curves,
        label,
        error: None,
    }
}

/// Scores each rerank configuration, or with `bm25_only` (or no
/// configurations) the shipped BM25 ordering. A failing configuration is
/// reported with its error and does not stop the others.
pub fn eval_rerankers(
    bench: &RerankerBenchmark,
    configs: &[RerankConfig],
    embed: Option<&dyn EmbeddingBackend>,
    gain: GainVariant,
    k: usize,
    bm25_only: bool,
) -> Vec<RerankerEval> {
    if bm25_only || configs.is_empty() {
        let bm25 = bench.grammars.iter().map(|g| g.ranking.clone()).collect();
        return vec![eval_orderings("BM25".to_string(), bm25, k, gain)];
    }
    let mut out = Vec::with_capacity(configs.len());
    let spec = builtin_feature(FeatureId::Wals81A);
    for cfg in configs {
        let label = cfg.label();
        let Some(backend) = embed else {
            out.push(failed(label, "no embedding backend configured".into()));
            continue;
        };
        let query = query_text(&spec, cfg.query_source);
        let results = bounded_map(&bench.grammars, cfg.max_in_flight, |g| {
            let list = ScoredList::from_ordered(
                Provenance::Bm25,
                g.texts.iter().enumerate().map(|(i, t)| {
                    (
                        Paragraph {
                            doc_id: g.grammar_id.clone(),
                            index: i,
                            text: t.clone(),
                        },
                        (g.len() - i) as f64,
                    )
                }),
            );
            let full = RerankConfig {
                top_m: g.len(),
                ..cfg.clone()
            };
            let reordered = rerank(&list, query, &full, backend)
                .map_err(|e| format!("{}: {e}", g.grammar_id))?;
            let rels = reordered
                .paragraphs()
                .map(|p| g.ranking.relevances_in_rank_order[p.index])
                .collect();
            Ok::<_, String>(JudgedRanking::new(g.grammar_id.clone(), rels).expect("grades valid"))
        });
        match results.into_iter().collect::<Result<Vec<_>, _>>() {
            Ok(rankings) => out.push(eval_orderings(label, rankings, k, gain)),
            Err(e) => {
                log::error!("{label}: {e}");
                out.push(failed(label, e));
            }
        }
    }
    out
}

fn failed(label: String, error: String) -> RerankerEval {
    RerankerEval {
        label,
        per_grammar: Vec::new(),
        curves: Vec::new(),
        mean_at_k: None,
        mean_curve: Vec::new(),
        error: Some(error),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes `summary.csv`, `per_grammar.csv` and `curves/<label>.csv`.
pub fn write_reranker_eval(
    out_dir: &Path,
    evals: &[RerankerEval],
    k: usize,
) -> Result<(), PipelineError> {
    let curves_dir = out_dir.join("curves");
    std::fs::create_dir_all(&curves_dir).map_err(io_err(&curves_dir))?;
    let mut summary = format!("config,ndcg_at_{k},n_grammars,n_undefined,error\n");
    let mut per = String::from("config,grammar_id,ndcg\n");
    for e in evals {
        let undefined = e.per_grammar.iter().filter(|(_, v)| v.is_none()).count();
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&e.label),
            fmt_opt(e.mean_at_k),
            e.per_grammar.len(),
            undefined,
            csv_field(e.error.as_deref().unwrap_or("")),
        ));
        for (g, v) in &e.per_grammar {
            per.push_str(&format!(
                "{},{},{}\n",
                csv_field(&e.label),
                csv_field(g),
                fmt_opt(*v)
            ));
        }
        if e.error.is_some() {
            continue;
        }
        let mut curve = String::from("grammar_id,k,ndcg\n");
        for (g, c) in e
            .curves
            .iter()
            .map(|(g, c)| (g.as_str(), c))
            .chain([("MEAN", &e.mean_curve)])
        {
            for (kk, v) in c {
                curve.push_str(&format!("{},{kk},{}\n", csv_field(g), fmt_opt(*v)));
            }
        }
        let safe: String = e
            .label
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        write_file(&curves_dir.join(format!("{safe}.csv")), curve.as_bytes())?;
    }
    write_file(&out_dir.join("summary.csv"), summary.as_bytes())?;
    write_file(&out_dir.join("per_grammar.csv"), per.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in RunMode::ALL {
            assert_eq!(m.as_str().parse::<RunMode>(), Ok(m));
        }
        assert_eq!("Bm25-CoT".parse::<RunMode>(), Ok(RunMode::Bm25Cot));
        assert!("cot".parse::<RunMode>().is_err());
    }

    #[test]
    fn mode_properties() {
        assert_eq!(RunMode::Baseline.default_n_runs(), 10);
        assert_eq!(RunMode::RerankCot.default_n_runs(), 1);
        assert!(RunMode::HumanCot.use_cot() && RunMode::HumanCot.sufficient_only());
        assert!(!RunMode::Bm25.sufficient_only());
        assert_eq!(RunMode::Rerank.evidence(), Evidence::Rerank);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = RunConfig::default();
        assert_eq!((c.k_retrieve, c.top_m, c.n_runs()), (50, 20, 1));
        assert_eq!(c.feature_ids().len(), 4);
        let b = RunConfig {
            mode: RunMode::Baseline,
            ..RunConfig::default()
        };
        assert_eq!(b.n_runs(), 10);
        let bad = RunConfig {
            run_id: "../x".into(),
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let zero = RunConfig {
            n_runs: Some(0),
            ..RunConfig::default()
        };
        assert!(zero.validate().is_err());
        let partial: RunConfig =
            serde_json::from_str(r#"{"run_id":"x","mode":"rerank_cot"}"#).unwrap();
        assert_eq!(partial.top_m, 20);
        assert_eq!(partial.mode, RunMode::RerankCot);
    }

    #[test]
    fn metrics_csv_shape() {
        let s = |m| run_stats(&[m]).unwrap();
        let row = MetricRow {
            feature: "WALS_81A".into(),
            config: "bm25".into(),
            n_items: 4,
            f1_micro: s(0.75),
            f1_macro: s(0.5),
            f1_weighted: s(0.6),
            accuracy: s(0.75),
        };
        assert_eq!(
            metrics_csv(&[row], None),
            format!("{METRICS_HEADER}\nWALS_81A,bm25,0.750000,0.500000,0.600000,0.750000,0.750000,0.000000\n")
        );
    }
}
