//! Command-line front end: runs, sweeps, model dumps, embedding study and
//! comparison reports over JSON-lines transcript corpora.

mod report;
mod runfile;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use copyspec::analysis::{
    check_sweep_values, compare_to_permuted, evaluate_transcript, summarize, train_left_skipgram,
    SkipGramConfig, SweepAxis, TranscriptResult,
};
use copyspec::corpus::synth::{self, CorpusKind, DEFAULT_CORPUS_SEED, DEFAULT_CORPUS_SIZE};
use copyspec::corpus::{self, EncodedTranscript, Vocabulary};
use copyspec::engine::{
    EngineConfig, KgramPair, Strategy, DEFAULT_CHUNK_LEN, DEFAULT_DRAFT_LEN, DEFAULT_DRAFT_ORDER,
    DEFAULT_MAX_NEW_TOKENS, DEFAULT_TARGET_ORDER,
};
use copyspec::lm::KgramCounts;
use copyspec::match_index::DEFAULT_GAMMA;
use copyspec::metrics::{aggregate_records, MetricsRecord};
use copyspec::{CostModel, SweepResult};
use rayon::prelude::*;

use runfile::{Format, RunFile};

/// Invalid input detected after argument parsing; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(
    name = "copyspec",
    version,
    about = "Speculative copy generation over transcript corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate every transcript of a corpus and write per-turn metrics.
    Run(RunArgs),
    /// Repeat a run over several values of gamma or chunk length.
    Sweep(SweepArgs),
    /// Train a k-gram model on a corpus and dump its counts as JSON.
    TrainLm(TrainArgs),
    /// Left-context embedding study: cosine similarity against a shuffled baseline.
    Skipgram(SkipgramArgs),
    /// Compare run files: strategy x turn table with speedup over baseline.
    Report(ReportArgs),
    /// Write one of the synthetic corpora as JSON lines.
    GenCorpus(GenArgs),
}

#[derive(Args)]
struct EngineArgs {
    /// Transcript corpus (JSON lines).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "copy", value_parser = parse_strategy)]
    strategy: Strategy,
    /// Suffix length that triggers a copy attempt.
    #[arg(long, default_value_t = DEFAULT_GAMMA, value_parser = positive)]
    gamma: usize,
    /// Maximum copied chunk length.
    #[arg(long, default_value_t = DEFAULT_CHUNK_LEN, value_parser = positive)]
    chunk: usize,
    /// Tokens the draft model proposes per attempt.
    #[arg(long, default_value_t = DEFAULT_DRAFT_LEN, value_parser = positive)]
    draft_tokens: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_NEW_TOKENS, value_parser = positive)]
    max_new_tokens: usize,
    /// Cost of one target pass.
    #[arg(long, default_value_t = 1.0)]
    cost_target: f64,
    /// Cost per position scored in a target pass.
    #[arg(long, default_value_t = 0.02)]
    cost_target_token: f64,
    /// Cost per token proposed by the draft model.
    #[arg(long, default_value_t = 0.1)]
    cost_draft_token: f64,
    /// Cost per index lookup or insertion.
    #[arg(long, default_value_t = 0.0)]
    cost_index_op: f64,
    /// Target model dump from `train-lm`; trained on the corpus when absent.
    #[arg(long)]
    model_path: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// `gamma` or `chunk`.
    #[arg(long, value_parser = parse_axis)]
    axis: SweepAxis,
    /// Comma-separated, strictly increasing.
    #[arg(long, value_delimiter = ',', required = true, value_parser = positive)]
    values: Vec<usize>,
    /// Also write one run file per value into this directory.
    #[arg(long)]
    raw_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TARGET_ORDER, value_parser = positive)]
    order: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SkipgramArgs {
    /// Corpus to study; a planted synthetic corpus is used when absent.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Context width planted in the synthetic corpus.
    #[arg(long, default_value_t = 3, value_parser = positive)]
    planted_gamma: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6", value_parser = positive)]
    gammas: Vec<usize>,
    #[arg(long, default_value_t = 16, value_parser = positive)]
    dim: usize,
    #[arg(long, default_value_t = 30, value_parser = positive)]
    epochs: usize,
    #[arg(long, default_value_t = 0.25)]
    learning_rate: f64,
    #[arg(long, env = "COPYSPEC_SEED", default_value_t = DEFAULT_CORPUS_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run files (JSON or CSV).
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Also write the table as markdown.
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: CorpusKind,
    #[arg(long, default_value_t = DEFAULT_CORPUS_SIZE, value_parser = positive)]
    count: usize,
    #[arg(long, env = "COPYSPEC_SEED", default_value_t = DEFAULT_CORPUS_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse()
}

fn parse_kind(s: &str) -> Result<CorpusKind, String> {
    s.parse()
}

/// An encoded corpus with the models to run it.
struct Prepared {
    name: String,
    transcripts: Vec<EncodedTranscript>,
    models: KgramPair,
}

fn corpus_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "corpus".to_owned(), |s| s.to_string_lossy().into_owned())
}

fn load_model(path: &Path) -> Result<(KgramCounts, Vocabulary)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (counts, vocab) = KgramCounts::from_json(&text)?;
    let vocab = vocab.ok_or_else(|| anyhow!("{} carries no vocabulary", path.display()))?;
    Ok((counts, vocab))
}

impl EngineArgs {
    fn config(&self) -> EngineConfig {
        EngineConfig {
            gamma: self.gamma,
            chunk_len: self.chunk,
            draft_len: self.draft_tokens,
            strategy: self.strategy,
            max_new_tokens: self.max_new_tokens,
            ..EngineConfig::default()
        }
    }

    fn cost(&self) -> Result<CostModel> {
        let cost = CostModel {
            target_pass_cost: self.cost_target,
            target_per_token_cost: self.cost_target_token,
            draft_token_cost: self.cost_draft_token,
            index_op_cost: self.cost_index_op,
        };
        cost.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cost)
    }

    fn prepare(&self) -> Result<Prepared> {
        let raw = corpus::load_transcripts(&self.corpus)
            .with_context(|| format!("loading {}", self.corpus.display()))?;
        let (mut vocab, target) = match &self.model_path {
            Some(p) => {
                let (counts, vocab) = load_model(p)?;
                (vocab, Some(counts))
            }
            None => (Vocabulary::with_reserved(), None),
        };
        let transcripts = corpus::encode_corpus(&raw, &mut vocab)?;
        let draft_order = self.strategy.drafts().then_some(DEFAULT_DRAFT_ORDER);
        let models = match target {
            Some(counts) => {
                let seqs: Vec<_> = transcripts.iter().map(corpus::training_sequence).collect();
                let draft = draft_order
                    .map(|k| KgramCounts::train(&seqs, k, vocab.len()).map(Arc::new))
                    .transpose()?;
                KgramPair {
                    target: Arc::new(counts.with_vocab_size(vocab.len())),
                    draft,
                }
            }
            None => KgramPair::train(&transcripts, DEFAULT_TARGET_ORDER, draft_order, vocab.len())?,
        };
        log::info!(
            "{}: {} transcripts, {} symbols",
            self.corpus.display(),
            transcripts.len(),
            vocab.len()
        );
        Ok(Prepared {
            name: corpus_name(&self.corpus),
            transcripts,
            models,
        })
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build()?)
    }
}

/// Evaluates every transcript; results come back sorted by transcript id.
fn evaluate_all(
    pool: &rayon::ThreadPool,
    prepared: &Prepared,
    config: EngineConfig,
    cost: &CostModel,
) -> Result<Vec<TranscriptResult<f64>>> {
    let mut results = pool.install(|| {
        prepared
            .transcripts
            .par_iter()
            .map(|t| evaluate_transcript(t, &prepared.models, config, cost))
            .collect::<Result<Vec<_>, _>>()
    })?;
    results.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(results)
}

fn run_file(name: &str, config: EngineConfig, cost: CostModel, results: &[TranscriptResult<f64>]) -> RunFile {
    let records: Vec<MetricsRecord> = results.iter().flat_map(|r| r.records(name, &config)).collect();
    let aggregates = aggregate_records(&records);
    RunFile {
        corpus: name.to_owned(),
        config,
        cost,
        records,
        aggregates,
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let e = &args.engine;
    let cost = e.cost()?;
    let config = e.config();
    let prepared = e.prepare()?;
    let results = evaluate_all(&e.pool()?, &prepared, config, &cost)?;
    let file = run_file(&prepared.name, config, cost, &results);
    runfile::emit(&file.render(e.format)?, e.out.as_deref())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let e = &args.engine;
    check_sweep_values(&args.values).map_err(|err| usage(err.to_string()))?;
    let cost = e.cost()?;
    let base = e.config();
    let prepared = e.prepare()?;
    let pool = e.pool()?;
    if let Some(dir) = &args.raw_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut points = Vec::with_capacity(args.values.len());
    for &value in &args.values {
        let config = args.axis.apply(base, value);
        let results = evaluate_all(&pool, &prepared, config, &cost)?;
        if let Some(dir) = &args.raw_dir {
            let ext = match e.format {
                Format::Json => "json",
                Format::Csv => "csv",
            };
            let path = dir.join(format!("{}-{}.{ext}", args.axis.name(), value));
            let file = run_file(&prepared.name, config, cost, &results);
            runfile::emit(&file.render(e.format)?, Some(&path))?;
        }
        points.push(summarize(value, results));
    }
    let sweep = SweepResult {
        axis: args.axis,
        points,
    };
    let text = match e.format {
        Format::Json => sweep.to_json() + "\n",
        Format::Csv => sweep.to_csv()?,
    };
    runfile::emit(&text, e.out.as_deref())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let raw = corpus::load_transcripts(&args.corpus)
        .with_context(|| format!("loading {}", args.corpus.display()))?;
    let mut vocab = Vocabulary::with_reserved();
    let transcripts = corpus::encode_corpus(&raw, &mut vocab)?;
    let seqs: Vec<_> = transcripts.iter().map(corpus::training_sequence).collect();
    let counts = KgramCounts::train(&seqs, args.order, vocab.len())?;
    runfile::emit(&(counts.to_json(Some(&vocab)) + "\n"), args.out.as_deref())
}

/// Planted corpus used by `skipgram` when no corpus is given.
const PLANTED_VOCAB: usize = 12;
const PLANTED_SEQUENCES: usize = 40;
const PLANTED_LENGTH: usize = 60;
const PLANTED_NOISE: f64 = 0.1;

fn cmd_skipgram(args: SkipgramArgs) -> Result<()> {
    let (seqs, vocab_size) = match &args.corpus {
        Some(path) => {
            let raw =
                corpus::load_transcripts(path).with_context(|| format!("loading {}", path.display()))?;
            let mut vocab = Vocabulary::with_reserved();
            let transcripts = corpus::encode_corpus(&raw, &mut vocab)?;
            (
                transcripts
                    .iter()
                    .map(corpus::training_sequence)
                    .collect::<Vec<_>>(),
                vocab.len(),
            )
        }
        None => (
            synth::planted_left_dependence(
                PLANTED_VOCAB,
                args.planted_gamma,
                PLANTED_SEQUENCES,
                PLANTED_LENGTH,
                PLANTED_NOISE,
                args.seed,
            ),
            PLANTED_VOCAB,
        ),
    };
    let base = SkipGramConfig {
        gamma: 1,
        dim: args.dim,
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        seed: args.seed,
    };
    let mut rows = Vec::with_capacity(args.gammas.len());
    for &gamma in &args.gammas {
        let model = train_left_skipgram::<f64>(&seqs, vocab_size, &SkipGramConfig { gamma, ..base })?;
        rows.push(compare_to_permuted(&seqs, &model, gamma, args.seed)?);
    }
    runfile::emit(
        &(serde_json::to_string_pretty(&rows)? + "\n"),
        args.out.as_deref(),
    )
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.files {
        records.extend(runfile::read_records(path)?);
    }
    let names = report::corpora(&records);
    if names.len() > 1 {
        log::warn!("reporting across different corpora: {names:?}");
    }
    let rows = report::build(&records)?;
    print!("{}", report::plain(&rows));
    if let Some(path) = &args.markdown {
        runfile::emit(&report::markdown(&rows), Some(path))?;
    }
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let transcripts = synth::generate(args.kind, args.count, args.seed);
    runfile::emit(&corpus::transcripts_to_jsonl(&transcripts), args.out.as_deref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::TrainLm(a) => cmd_train(a),
        Command::Skipgram(a) => cmd_skipgram(a),
        Command::Report(a) => cmd_report(a),
        Command::GenCorpus(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<UsageError>() { 2 } else { 1 })
        }
    }
}
