//! `dsqa`: train, evaluate, build the knowledge base, ask and serve.
//!
//! Exit status is 0 on success, 2 when arguments or input paths are wrong
//! and 1 when the work itself fails.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "dsqa",
    version,
    about = "Dietary-supplement question answering agent"
)]
struct Cli {
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for fold-parallel evaluation.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labelled corpus.
    Synth(SynthArgs),
    /// Train a question classifier or an entity tagger.
    Train(TrainArgs),
    /// Cross-validate a model family, score a saved model, or summarize grades.
    Eval(EvalArgs),
    /// Convert RRF knowledge-base files to the JSON index format.
    Kb(KbArgs),
    /// Answer one question.
    Ask(AskArgs),
    /// Run the HTTP chat service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Classifier,
    Ner,
    Grades,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Linear,
    Conv,
    Crf,
    Hmm,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON or TOML overrides for the generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    task: Task,
    /// Model family; conv for classifiers and crf for NER by default.
    #[arg(long, value_enum)]
    algo: Option<Algo>,
    #[arg(long)]
    corpus: PathBuf,
    /// JSON or TOML overrides for the training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pretrained word vectors in GloVe text format (conv only).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    task: Task,
    #[arg(long, value_enum)]
    algo: Option<Algo>,
    #[arg(long, required_unless_present = "grades")]
    corpus: Option<PathBuf>,
    /// Score this saved model on the whole corpus instead of cross-validating.
    #[arg(long)]
    model: Option<PathBuf>,
    /// CSV of graded answers with header `id,grade,rank` (task grades).
    #[arg(long)]
    grades: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct KbArgs {
    #[arg(long)]
    conso: PathBuf,
    #[arg(long)]
    rel: PathBuf,
    #[arg(long)]
    sat: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AskArgs {
    /// Directory holding classifier.json and ner.json.
    #[arg(long)]
    models: PathBuf,
    /// Directory written by `dsqa kb`.
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    confidence_floor: Option<f64>,
    /// Also print type, entities and the pipeline trace.
    #[arg(long)]
    explain: bool,
    #[arg(required = true, num_args = 1..)]
    question: Vec<String>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Service TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the bind address in the config.
    #[arg(long)]
    bind: Option<String>,
}

/// Bad arguments or input paths; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
