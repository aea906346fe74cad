use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use gramrac_core::benchio::{
    convert_benchmark, group_reranker_records, load_rag_gold, load_reranker_benchmark,
    save_reranker_benchmark, ColumnMap,
};
use gramrac_core::corpus::{load_corpus, split_paragraphs, split_text, GrammarDoc};
use gramrac_core::features::{builtin_feature, builtin_features, with_data_overrides, FeatureSpec};
use gramrac_core::llmclient::{
    ChatTransport, HttpChatTransport, MockChatTransport, MockLlmFixture,
};
use gramrac_core::pipeline::{
    consolidate, eval_rerankers, load_report, query_text, run_rag, write_reranker_eval, Backends,
    RunOptions,
};
use gramrac_core::rerank::{
    rerank, EmbeddingBackend, HttpEmbeddingBackend, MockEmbeddingBackend, RerankConfig,
};
use gramrac_core::retrieval::{retrieve_top_k, ScoredList};
use gramrac_core::sampling::{
    load_candidates, load_genus_table, macroarea_quota, stratified_sample, write_manifest,
};
use serde::Serialize;

use crate::args::*;
use crate::config::AppConfig;
use crate::error::{backend, data, usage, CliResult};

const EMBED_TIMEOUT: Duration = Duration::from_secs(60);
const DEFAULT_RUNS_DIR: &str = "runs";

pub struct Ctx {
    pub global: Global,
    pub config: AppConfig,
}

impl Ctx {
    fn embedder(&self, endpoint: &str) -> CliResult<Box<dyn EmbeddingBackend>> {
        match &self.global.mock_embed {
            Some(path) => MockEmbeddingBackend::from_file(path)
                .map(|m| Box::new(m) as Box<dyn EmbeddingBackend>)
                .map_err(|e| data(format!("mock embed fixture {}: {e}", path.display()))),
            None => HttpEmbeddingBackend::new(endpoint, EMBED_TIMEOUT)
                .map(|b| Box::new(b) as Box<dyn EmbeddingBackend>)
                .map_err(backend),
        }
    }

    fn runs_dir(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .or_else(|| self.config.runs_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_RUNS_DIR))
    }

    fn features(&self, flag: &Option<PathBuf>) -> CliResult<Vec<FeatureSpec>> {
        match flag.as_ref().or(self.config.feature_data.as_ref()) {
            Some(dir) => with_data_overrides(builtin_features(), dir)
                .map_err(|e| data(format!("feature data {}: {e}", dir.display()))),
            None => Ok(builtin_features()),
        }
    }
}

// A closed downstream pipe ends output quietly.
fn emit(text: &str) -> CliResult<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(data(e)),
        _ => Ok(()),
    }
}

fn stdout_lines<T: Serialize>(rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut buf = String::new();
    for r in rows {
        buf.push_str(&serde_json::to_string(&r).expect("row serializes"));
        buf.push('\n');
    }
    emit(&buf)
}

fn corpus(path: &Path) -> CliResult<Vec<GrammarDoc>> {
    load_corpus(path).map_err(data)
}

fn find_doc(docs: Vec<GrammarDoc>, id: &str) -> CliResult<GrammarDoc> {
    docs.into_iter()
        .find(|d| d.doc_id == id)
        .ok_or_else(|| data(format!("no document {id:?} in corpus")))
}

pub fn chunk(args: &ChunkArgs) -> CliResult<()> {
    let paragraphs = if args.input.is_dir() {
        let mut docs = corpus(&args.input)?;
        if let Some(id) = &args.doc {
            docs = vec![find_doc(docs, id)?];
        }
        docs.iter().flat_map(split_paragraphs).collect::<Vec<_>>()
    } else {
        let bytes = std::fs::read(&args.input)
            .map_err(|e| data(format!("{}: {e}", args.input.display())))?;
        let text = String::from_utf8(bytes)
            .map_err(|_| data(format!("{}: not valid UTF-8", args.input.display())))?;
        let id = args.doc.clone().unwrap_or_else(|| {
            args.input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        split_text(&id, &text)
    };
    stdout_lines(paragraphs)
}

#[derive(Serialize)]
struct ListRow<'a> {
    rank: usize,
    doc_id: &'a str,
    index: usize,
    score: f64,
    text: &'a str,
}

fn print_list(list: &ScoredList) -> CliResult<()> {
    stdout_lines(list.entries.iter().map(|e| ListRow {
        rank: e.rank,
        doc_id: &e.paragraph.doc_id,
        index: e.paragraph.index,
        score: e.score,
        text: &e.paragraph.text,
    }))
}

fn bm25_list(ctx: &Ctx, q: &QueryArgs) -> CliResult<ScoredList> {
    let doc = find_doc(corpus(&q.corpus)?, &q.doc)?;
    let text = match (&q.query, q.feature) {
        (Some(t), _) => t.clone(),
        (None, Some(f)) => query_text(&builtin_feature(f), q.bm25_query).to_string(),
        (None, None) => return Err(usage("give --feature or --query")),
    };
    retrieve_top_k(&split_paragraphs(&doc), &text, q.k, ctx.config.run.bm25).map_err(data)
}

pub fn retrieve(ctx: &Ctx, args: &RetrieveArgs) -> CliResult<()> {
    print_list(&bm25_list(ctx, &args.query)?)
}

fn reranker_config(base: RerankConfig, a: &RerankerArgs) -> RerankConfig {
    RerankConfig {
        model_id: a.model.clone().unwrap_or(base.model_id),
        instruct: a.instruct.unwrap_or(base.instruct),
        query_source: a.query_source.unwrap_or(base.query_source),
        endpoint: a.endpoint.clone().unwrap_or(base.endpoint),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        ..base
    }
}

pub fn rerank_cmd(ctx: &Ctx, args: &RerankArgs) -> CliResult<()> {
    let mut config = reranker_config(ctx.config.run.rerank.clone(), &args.reranker);
    if let Some(m) = args.top_m {
        config.top_m = m;
    }
    let list = bm25_list(ctx, &args.query)?;
    let query = match (&args.query.query, args.query.feature) {
        (Some(t), _) => t.clone(),
        (None, Some(f)) => query_text(&builtin_feature(f), config.query_source).to_string(),
        (None, None) => return Err(usage("give --feature or --query")),
    };
    let embed = ctx.embedder(&config.endpoint)?;
    let out = rerank(&list, &query, &config, embed.as_ref()).map_err(backend)?;
    print_list(&out)
}

pub fn eval(ctx: &Ctx, args: &EvalArgs) -> CliResult<()> {
    let bench = load_reranker_benchmark(&args.benchmark).map_err(data)?;
    for w in &bench.warnings {
        log::warn!("{w}");
    }
    let configs: Vec<RerankConfig> = if args.reranker.any() {
        vec![reranker_config(RerankConfig::default(), &args.reranker)]
    } else if !ctx.config.rerankers.is_empty() {
        ctx.config.rerankers.clone()
    } else {
        vec![RerankConfig::default()]
    };
    let gain = ctx.global.gain;
    let evals = if ctx.global.bm25_only {
        eval_rerankers(&bench, &[], None, gain, args.k, true)
    } else {
        let mut out = Vec::new();
        for c in &configs {
            let embed = ctx.embedder(&c.endpoint)?;
            out.extend(eval_rerankers(
                &bench,
                std::slice::from_ref(c),
                Some(embed.as_ref()),
                gain,
                args.k,
                false,
            ));
        }
        out
    };
    write_reranker_eval(&args.out, &evals, args.k)?;
    let mut text = String::new();
    for e in &evals {
        text.push_str(&match (&e.error, e.mean_at_k) {
            (Some(err), _) => format!("{}\terror: {err}\n", e.label),
            (None, Some(v)) => format!("{}\tNDCG@{} = {v:.4}\n", e.label, args.k),
            (None, None) => format!("{}\tNDCG@{} undefined\n", e.label, args.k),
        });
    }
    emit(&text)?;
    let failed = evals.iter().filter(|e| e.error.is_some()).count();
    if failed > 0 {
        return Err(backend(format!(
            "{failed} reranker configuration(s) failed"
        )));
    }
    Ok(())
}

pub fn run(ctx: &Ctx, args: &RunArgs) -> CliResult<()> {
    let mut config = ctx.config.run.clone();
    if let Some(m) = args.mode {
        config.mode = m;
        if args.run_id.is_none() && ctx.config.run.run_id == "run" {
            config.run_id = m.as_str().to_string();
        }
    }
    if let Some(id) = &args.run_id {
        config.run_id = id.clone();
    }
    if let Some(n) = args.n_runs {
        config.n_runs = Some(n);
    }
    if !args.features.is_empty() {
        config.features = args.features.clone();
    }
    if let Some(k) = args.k_retrieve {
        config.k_retrieve = k;
    }
    if let Some(m) = args.top_m {
        config.top_m = m;
    }
    if let Some(s) = ctx.global.seed {
        config.seed = s;
    }
    config.dump_prompts |= args.dump_prompts;
    config.allow_no_mention |= args.allow_no_mention;
    config.validate()?;

    let docs = corpus(&args.corpus)?;
    let gold = load_rag_gold(&args.gold).map_err(data)?;
    let features = ctx.features(&args.feature_data)?;

    let chat: Box<dyn ChatTransport> = match &ctx.global.mock_llm {
        Some(path) => Box::new(MockChatTransport::new(
            MockLlmFixture::load(path)
                .map_err(|e| data(format!("mock LLM fixture {}: {e}", path.display())))?,
        )),
        None => Box::new(HttpChatTransport::new(&config.llm).map_err(backend)?),
    };
    let embed = if config.mode.evidence() == gramrac_core::pipeline::Evidence::Rerank {
        Some(ctx.embedder(&config.rerank.endpoint)?)
    } else {
        None
    };
    let runs_dir = ctx.runs_dir(&args.runs_dir);
    let outcome = run_rag(
        &docs,
        &gold,
        &features,
        &config,
        &Backends {
            chat: chat.as_ref(),
            embed: embed.as_deref(),
        },
        &runs_dir,
        RunOptions {
            stop_after_calls: args.stop_after,
        },
    )?;
    eprintln!(
        "run {}: {} new calls, {} reused, {} backend errors; artifacts in {}",
        config.run_id,
        outcome.new_calls,
        outcome.skipped_completed,
        outcome.backend_errors,
        outcome.run_dir.display()
    );
    match &outcome.report {
        Some(report) => emit(&consolidate(std::slice::from_ref(report)).markdown)?,
        None => eprintln!("run stopped early; rerun the same command to resume"),
    }
    if outcome.backend_errors > 0 {
        return Err(backend(format!(
            "{} item(s) exhausted backend retries; rerun to retry them",
            outcome.backend_errors
        )));
    }
    Ok(())
}

pub fn report(ctx: &Ctx, args: &ReportArgs) -> CliResult<()> {
    let runs_dir = ctx.runs_dir(&args.runs_dir);
    let reports = args
        .run_ids
        .iter()
        .map(|id| load_report(&runs_dir, id))
        .collect::<Result<Vec<_>, _>>()?;
    let table = consolidate(&reports);
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| data(format!("{}: {e}", out.display())))?;
        for (name, body) in [("report.csv", &table.csv), ("report.md", &table.markdown)] {
            let p = out.join(name);
            std::fs::write(&p, body).map_err(|e| data(format!("{}: {e}", p.display())))?;
        }
    }
    emit(&table.markdown)
}

pub fn sample(ctx: &Ctx, args: &SampleArgs) -> CliResult<()> {
    let table = load_genus_table(&args.genera, args.per_language).map_err(data)?;
    let quota = macroarea_quota(&table, args.total).map_err(data)?;
    let candidates = load_candidates(&args.candidates).map_err(data)?;
    let seed = ctx.global.seed.unwrap_or(ctx.config.run.seed);
    let picked = stratified_sample(&candidates, &quota, seed).map_err(data)?;
    let file = std::fs::File::create(&args.out)
        .map_err(|e| data(format!("{}: {e}", args.out.display())))?;
    let mut w = std::io::BufWriter::new(file);
    write_manifest(&mut w, &picked)
        .and_then(|_| w.flush())
        .map_err(|e| data(format!("{}: {e}", args.out.display())))?;
    let mut text: String = quota
        .counts
        .iter()
        .map(|(m, n)| format!("{m}\t{n}\n"))
        .collect();
    text.push_str(&format!("total\t{}\n", quota.total()));
    emit(&text)
}

pub fn features(ctx: &Ctx, cmd: &FeaturesCommand) -> CliResult<()> {
    match cmd {
        FeaturesCommand::Dump { feature_data } => {
            let specs = ctx.features(feature_data)?;
            emit(&(serde_json::to_string_pretty(&specs).expect("specs serialize") + "\n"))
        }
    }
}

pub fn convert(args: &ConvertArgs) -> CliResult<()> {
    let mut map = ColumnMap::default();
    for (flag, slot) in [
        (&args.grammar_col, &mut map.grammar_id),
        (&args.rank_col, &mut map.bm25_rank),
        (&args.text_col, &mut map.text),
        (&args.relevance_col, &mut map.relevance),
    ] {
        if let Some(name) = flag {
            slot.insert(0, name.clone());
        }
    }
    let records = convert_benchmark(&args.input, &map).map_err(data)?;
    let bench = group_reranker_records(
        records
            .into_iter()
            .enumerate()
            .map(|(i, r)| (i + 1, r))
            .collect(),
        &args.input,
    )
    .map_err(data)?;
    for w in &bench.warnings {
        log::warn!("{w}");
    }
    save_reranker_benchmark(&args.out, &bench)
        .map_err(|e| data(format!("{}: {e}", args.out.display())))?;
    let h = bench.grade_histogram();
    emit(&format!(
        "{} grammars, {} records, grades 0-5: {}\n",
        bench.grammars.len(),
        bench.n_records(),
        h.iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join("/")
    ))
}
