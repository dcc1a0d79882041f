use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod error;
mod files;
mod settings;

use settings::Settings;

/// Sentence-to-knowledge-path dataset building, path generation and
/// evaluation over a commonsense knowledge graph.
#[derive(Parser, Debug)]
#[command(name = "kgpath", version)]
struct Cli {
    /// TOML file with `[global]` and per-subcommand sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every stage derives its own sub-seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Leave creation timestamps out of written files.
    #[arg(long, global = true)]
    no_timestamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Index a sentence corpus (text or JSONL).
    BuildIndex(BuildIndexArgs),
    /// Sample relational paths from a knowledge graph.
    SamplePaths(SamplePathsArgs),
    /// Align sampled paths with corpus sentences.
    MakePairs(MakePairsArgs),
    /// Train the reference path generator on a pair dataset.
    TrainGen(TrainGenArgs),
    /// Decode paths for sentences.
    Generate(GenerateArgs),
    /// Score decoded paths against reference pairs.
    Evaluate(EvaluateArgs),
    /// Train the path-attention QA scorer.
    QaTrain(QaTrainArgs),
    /// Evaluate a trained QA scorer.
    QaEval(QaEvalArgs),
    /// Pair similarity and n-gram leakage audit.
    Audit(AuditArgs),
}

#[derive(Args, Debug)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// text | jsonl | auto
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Args, Debug)]
pub struct SamplePathsArgs {
    #[arg(long)]
    pub kg: Option<String>,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub min_hops: Option<usize>,
    #[arg(long)]
    pub max_hops: Option<usize>,
    /// Comma-separated relation base names never used in paths.
    #[arg(long)]
    pub banned: Option<String>,
}

#[derive(Args, Debug)]
pub struct MakePairsArgs {
    /// Linearized paths, one per line.
    #[arg(long)]
    pub paths: Option<String>,
    #[arg(long)]
    pub index: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Precomputed embeddings (JSONL); hashed TF-IDF when absent.
    #[arg(long)]
    pub embeddings: Option<String>,
    /// Hashed TF-IDF dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub k_prime: Option<usize>,
    #[arg(long)]
    pub p_mask: Option<f64>,
    /// q1 | q2 | q1+q2
    #[arg(long)]
    pub templates: Option<String>,
    /// Max candidates retrieved per query.
    #[arg(long)]
    pub cap: Option<usize>,
    /// Held-out pair file; paths are split between train and test.
    #[arg(long)]
    pub test_out: Option<String>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainGenArgs {
    #[arg(long)]
    pub pairs: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Interpolation weights `trigram,bigram,unigram,uniform`.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Copy-bias strength.
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: Option<String>,
    /// Sentences: plain lines or JSONL with a `sentence` field.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// greedy | topk | nucleus | diverse | all
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_hops: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Decoded paths (JSONL from `generate`).
    #[arg(long)]
    pub pred: Option<String>,
    /// Reference pairs (JSONL from `make-pairs`).
    #[arg(long = "ref")]
    pub reference: Option<String>,
    /// Training pairs, for novelty.
    #[arg(long)]
    pub train: Option<String>,
    /// JSON report file (stdout table only when absent).
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct QaTrainArgs {
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub hidden_d: Option<usize>,
    #[arg(long)]
    pub hidden_e: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Backtracking line search (loss never increases).
    #[arg(long)]
    pub line_search: bool,
    /// Drop the output bias.
    #[arg(long)]
    pub no_bias: bool,
}

#[derive(Args, Debug)]
pub struct QaEvalArgs {
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub scorer: Option<String>,
    /// Per-example predictions (JSONL).
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long)]
    pub pairs: Option<String>,
    /// Questions for the leakage audit: plain lines or JSONL with `question` (or `sentence`).
    #[arg(long)]
    pub questions: Option<String>,
    /// Index whose statistics fit the TF-IDF embedder (the pair sentences otherwise).
    #[arg(long)]
    pub index: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub max_n: Option<usize>,
    /// JSON report file (stdout when absent).
    #[arg(long)]
    pub out: Option<String>,
}

impl Command {
    fn section(&self) -> &'static str {
        match self {
            Command::BuildIndex(_) => "build-index",
            Command::SamplePaths(_) => "sample-paths",
            Command::MakePairs(_) => "make-pairs",
            Command::TrainGen(_) => "train-gen",
            Command::Generate(_) => "generate",
            Command::Evaluate(_) => "evaluate",
            Command::QaTrain(_) => "qa-train",
            Command::QaEval(_) => "qa-eval",
            Command::Audit(_) => "audit",
        }
    }
}

/// Values shared by every subcommand.
pub struct Globals {
    pub seed: u64,
    pub created_unix: Option<u64>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = settings::read_config(cli.config.as_deref())?;
    let mut s = Settings::new(cli.command.section(), config.as_deref())?;
    let seed = s.value("seed", cli.seed, 0u64)?;
    let workers = s.optional("workers", cli.workers)?;
    let no_timestamp = s.switch("no-timestamp", cli.no_timestamp)?;
    if let Some(n) = workers {
        if n == 0 {
            return Err(error::UsageError("--workers must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let created_unix = (!no_timestamp).then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let globals = Globals { seed, created_unix };
    match &cli.command {
        Command::BuildIndex(a) => commands::build_index(a, &mut s, &globals),
        Command::SamplePaths(a) => commands::sample_paths(a, &mut s, &globals),
        Command::MakePairs(a) => commands::make_pairs(a, &mut s, &globals),
        Command::TrainGen(a) => commands::train_gen(a, &mut s, &globals),
        Command::Generate(a) => commands::generate(a, &mut s, &globals),
        Command::Evaluate(a) => commands::evaluate(a, &mut s, &globals),
        Command::QaTrain(a) => commands::qa_train(a, &mut s, &globals),
        Command::QaEval(a) => commands::qa_eval(a, &mut s, &globals),
        Command::Audit(a) => commands::audit(a, &mut s, &globals),
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e))
        }
    }
}
