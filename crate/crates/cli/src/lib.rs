//! Command-line front end: `generate`, `validate`, `train`, `evaluate` and
//! `explain`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use muvitanet::Error;

mod commands;
mod files;

pub use commands::{cmd_evaluate, cmd_explain, cmd_generate, cmd_train, cmd_validate};
pub use files::{RunConfig, CHECKPOINT_FILE, EVAL_FILE, METRICS_FILE, PROVENANCE_FILE, RESOLVED_CONFIG_FILE, STATE_FILE};

#[derive(Debug, Parser)]
#[command(name = "muvitanet", version, about = "Multi-view multi-task complication risk profiling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bundle from a JSON spec.
    Generate(GenerateArgs),
    /// Load a bundle and check every record.
    Validate(ValidateArgs),
    /// Cross-validated training with per-fold checkpoints.
    Train(TrainArgs),
    /// AU-ROC of saved checkpoints on a bundle.
    Evaluate(EvaluateArgs),
    /// Attention rankings or a single-patient case study.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Synthetic spec (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite bundle files in a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_visits: usize,
    /// Also require a non-empty unlabeled pool.
    #[arg(long)]
    pub contrastive: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Trainer config (JSON); flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// full, -feature-view, -visit-view, -task-specific or -unlabeled.
    #[arg(long, allow_hyphen_values = true)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Train only this fold.
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Folds trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Continue from saved per-fold training state.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Train,
    Validation,
    Test,
    /// Every labeled record of the bundle.
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Checkpoint files or training output directories.
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    pub split: EvalSplit,
    /// Write the result here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Checkpoint file, or a training output directory with `--fold`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub fold: Option<usize>,
    /// Task to explain; every task when omitted with `--global`.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, conflicts_with = "global", required_unless_present = "global")]
    pub patient: Option<String>,
    #[arg(long)]
    pub global: bool,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Rank over every record instead of positives only.
    #[arg(long)]
    pub all_records: bool,
    /// Removal set such as `visits=3,9` or `codes=DX0001`; repeatable.
    #[arg(long, requires = "patient")]
    pub ablate: Vec<String>,
    /// Directory for report files; standard output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the case study as text rather than JSON.
    #[arg(long)]
    pub text: bool,
}

pub fn run(cli: Cli) -> muvitanet::Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| ()),
        Command::Explain(a) => cmd_explain(&a),
    }
}

/// Machine-readable code and process exit status of an error.
pub fn error_code(e: &Error) -> (&'static str, i32) {
    match e {
        Error::Config(_) | Error::Spec(_) | Error::TaskKind(_) | Error::Domain(_) => ("E_CONFIG", 2),
        Error::Compatibility(_) => ("E_COMPAT", 3),
        Error::Lookup(_) => ("E_LOOKUP", 3),
        Error::Io { .. } => ("E_IO", 3),
        Error::Parse { .. } | Error::Json(_) => ("E_PARSE", 3),
        Error::Validation(_)
        | Error::Vocabulary(_)
        | Error::Stratification(_)
        | Error::DegenerateRecord(_)
        | Error::Ordering { .. } => ("E_DATA", 3),
        Error::Divergence { .. } | Error::Evaluation(_) => ("E_DIVERGENCE", 4),
        Error::UndefinedMetric(_) => ("E_METRIC", 5),
        Error::Dimension { .. } | Error::DegenerateVector { .. } | Error::State(_) => ("E_INTERNAL", 1),
    }
}

/// `error[CODE]: message` on one line.
pub fn error_line(code: &str, message: &str) -> String {
    let flat: Vec<&str> = message.split_whitespace().collect();
    format!("error[{code}]: {}", flat.join(" "))
}
