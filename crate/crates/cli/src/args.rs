use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gramrac_core::features::FeatureId;
use gramrac_core::metrics::GainVariant;
use gramrac_core::pipeline::RunMode;
use gramrac_core::rerank::{Instruct, QuerySource};

#[derive(Debug, Parser)]
#[command(
    name = "gramrac",
    version,
    about = "Retrieval-augmented feature classification over descriptive grammars"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for sampling; also stored in run configs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Answer LLM calls from a mock fixture instead of the network.
    #[arg(long, global = true, value_name = "FIXTURE")]
    pub mock_llm: Option<PathBuf>,
    /// Answer embedding calls from a mock fixture instead of the network.
    #[arg(long, global = true, value_name = "FIXTURE")]
    pub mock_embed: Option<PathBuf>,
    /// DCG gain for NDCG.
    #[arg(long, global = true, value_parser = parse_gain, default_value = "linear")]
    pub gain: GainVariant,
    /// Score only the shipped BM25 ordering.
    #[arg(long, global = true)]
    pub bm25_only: bool,
}

fn parse_gain(s: &str) -> Result<GainVariant, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split grammar texts into paragraphs (JSONL on stdout).
    Chunk(ChunkArgs),
    /// BM25 top-k paragraphs of one grammar.
    Retrieve(RetrieveArgs),
    /// BM25 top-k followed by embedding rerank.
    Rerank(RerankArgs),
    /// NDCG of rerankers on the reranker benchmark.
    EvalRerankers(EvalArgs),
    /// Run the RAG pipeline in one mode.
    Run(RunArgs),
    /// Consolidate finished runs into one table.
    Report(ReportArgs),
    /// Draw a genus-stratified language sample.
    Sample(SampleArgs),
    /// Feature definitions.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Convert a benchmark export (csv, tsv, json, jsonl) to canonical JSONL.
    ConvertBenchmark(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct ChunkArgs {
    /// Corpus directory (with metadata.json) or a single text file.
    pub input: PathBuf,
    /// Restrict to one document of a corpus.
    #[arg(long)]
    pub doc: Option<String>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub doc: String,
    /// Build the query from this feature.
    #[arg(long, conflicts_with = "query", required_unless_present = "query")]
    pub feature: Option<FeatureId>,
    /// Literal query text.
    #[arg(long)]
    pub query: Option<String>,
    /// Which feature text forms the BM25 query.
    #[arg(long, default_value = "wiki-summary")]
    pub bm25_query: QuerySource,
    #[arg(long, default_value_t = 50)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub query: QueryArgs,
}

#[derive(Debug, Args)]
pub struct RerankerArgs {
    /// Embedding model id.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub instruct: Option<Instruct>,
    /// Which feature text forms the rerank query.
    #[arg(long)]
    pub query_source: Option<QuerySource>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

impl RerankerArgs {
    pub fn any(&self) -> bool {
        self.model.is_some()
            || self.instruct.is_some()
            || self.query_source.is_some()
            || self.endpoint.is_some()
            || self.batch_size.is_some()
    }
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    #[command(flatten)]
    pub reranker: RerankerArgs,
    #[arg(long)]
    pub top_m: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Benchmark JSONL (see convert-benchmark).
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Output directory for summary, per-grammar and curve CSVs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// A single reranker given on the command line replaces the config list.
    #[command(flatten)]
    pub reranker: RerankerArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub mode: Option<RunMode>,
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
    #[arg(long)]
    pub n_runs: Option<usize>,
    /// Comma-separated feature ids; default all.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<FeatureId>,
    #[arg(long)]
    pub k_retrieve: Option<usize>,
    #[arg(long)]
    pub top_m: Option<usize>,
    /// Write every assembled prompt under prompts/.
    #[arg(long)]
    pub dump_prompts: bool,
    /// Accept "No mention" answers.
    #[arg(long)]
    pub allow_no_mention: bool,
    /// Directory overriding the built-in wiki/, cot/ and prompts/ texts.
    #[arg(long)]
    pub feature_data: Option<PathBuf>,
    /// Stop after this many backend calls, leaving the run resumable.
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub run_ids: Vec<String>,
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
    /// Directory for report.csv and report.md; stdout gets the markdown.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// CSV with genus and macroarea columns.
    #[arg(long)]
    pub genera: PathBuf,
    /// The genus CSV has one row per language.
    #[arg(long)]
    pub per_language: bool,
    /// Candidate grammars, JSONL.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, default_value_t = 148)]
    pub total: usize,
    /// Manifest JSONL to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCommand {
    /// Print feature definitions as JSON.
    Dump {
        #[arg(long)]
        feature_data: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub grammar_col: Option<String>,
    #[arg(long)]
    pub rank_col: Option<String>,
    #[arg(long)]
    pub text_col: Option<String>,
    #[arg(long)]
    pub relevance_col: Option<String>,
}
