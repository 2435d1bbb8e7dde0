//! `lusoforge` command line.

mod commands;
mod config;
mod error;
mod manifest;
mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::encoder::Preset;
use crate::finetune::Precision;

pub use commands::{GridChoice, DEFAULT_OUT};
pub use config::{resolve, DEFAULT_SEED};
pub use error::{CliError, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
pub use manifest::{sha256_file, write_atomic, InputDigest, RunManifest};
pub use plot::{emit_loss_curve, loss_curve_csv, loss_curve_svg, read_loss_csv};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "lusoforge", version, about = "Corpus curation, tokenizer training, MLM pre-training and fine-tuning sweeps")]
pub struct Cli {
    /// JSON settings; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root of all randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (also LUSOFORGE_THREADS). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus filtering and statistics.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Subword vocabulary.
    #[command(subcommand)]
    Tokenizer(TokenizerCommand),
    /// Masked-language-model pre-training.
    Pretrain(PretrainArgs),
    /// One fine-tuning run.
    Finetune(FinetuneArgs),
    /// Hyperparameter grid with dev-based selection.
    Sweep(SweepArgs),
    /// Score a fine-tuned model.
    Eval(EvalArgs),
    /// Summary table and loss curves.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// TLD, duplicate and quality filters.
    Filter(CorpusFilterArgs),
    /// Per-source document and token shares.
    Stats(CorpusStatsArgs),
}

#[derive(Debug, Subcommand)]
pub enum TokenizerCommand {
    Train(TokenizerTrainArgs),
}

#[derive(Debug, Args)]
pub struct CorpusFilterArgs {
    /// Documents as JSON lines.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Keep only URLs under this country-code TLD.
    #[arg(long)]
    pub country_code: Option<String>,
    #[arg(long)]
    pub near_dedup: Option<bool>,
    /// Count tokens with this vocabulary instead of whitespace words.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusStatsArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TokenizerTrainArgs {
    /// JSON lines, task TSV, or plain text with one document per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub micro_batch_size: Option<usize>,
    #[arg(long)]
    pub accumulation_steps: Option<usize>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub total_steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[arg(long)]
    pub dropout_rate: Option<f32>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
}

/// Model and data flags shared by `finetune` and `sweep`.
#[derive(Debug, Args)]
pub struct TaskArgs {
    /// assin2-sts, assin2-rte, sts, stsb, rte, wnli or mrpc.
    #[arg(long)]
    pub task: Option<String>,
    /// Pre-trained encoder; without it a randomly initialized preset is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// TSV (sentence_a, sentence_b, label) or ASSIN 2 XML.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Carved out of train when absent.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub dropout: Option<f32>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// `full` runs all 36 points; `single` runs one configuration over the three seeds.
    #[arg(long, value_enum)]
    pub grid: Option<GridChoice>,
    /// Row label in the summary table.
    #[arg(long)]
    pub model_name: Option<String>,
    #[arg(long)]
    pub dropout: Option<f32>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `finetune`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics files written by `sweep`.
    #[arg(long, num_args = 1..)]
    pub metrics: Vec<PathBuf>,
    /// `loss.csv` written by `pretrain`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests;
