//! The `cryptoid` command line: dataset synthesis, feature extraction,
//! training, evaluation, single-program classification and random
//! hyperparameter search.
//!
//! Relative paths resolve against the working directory, which defaults to
//! `CRYPTOID_WORKDIR` and then to the current directory.

pub mod commands;
pub mod container;
pub mod error;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use cryptoid_core::ClassLabel;

pub use commands::{ablation, classify, eval, extract, hypersearch, synth, train, TrainConfig};
pub use container::DatasetContainer;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "cryptoid",
    version,
    about = "Classify cryptographic primitives from dynamic traces"
)]
pub struct Cli {
    /// Master seed (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path; each command has its own default.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Training configuration as JSON (`train`, `hypersearch`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base directory for relative paths.
    #[arg(long, global = true, env = "CRYPTOID_WORKDIR")]
    pub workdir: Option<PathBuf>,
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a balanced set of synthesized programs and a manifest.
    Synth(SynthArgs),
    /// Trace every program in a manifest into a feature container.
    Extract(ExtractArgs),
    /// Train a model on a feature container.
    Train(TrainArgs),
    /// Score a checkpoint on a feature container.
    Eval(EvalArgs),
    /// Run one program through the whole pipeline.
    Classify(ClassifyArgs),
    /// Random search over model hyperparameters.
    Hypersearch(HypersearchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Comma-separated class labels.
    #[arg(long, value_delimiter = ',', default_values_t = ClassLabel::ALL)]
    pub classes: Vec<ClassLabel>,
    /// Number of programs.
    #[arg(long, default_value_t = 750)]
    pub n: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    #[arg(long, default_value = "dataset/manifest.jsonl")]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = extract::DEFAULT_STEP_LIMIT)]
    pub step_limit: u64,
    /// Treat every entropy score as zero.
    #[arg(long)]
    pub no_entropy: bool,
    /// Keep at most this many blocks per sample.
    #[arg(long, default_value_t = cryptoid_core::features::DEFAULT_MAX_S)]
    pub max_s: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "features.cidf")]
    pub features: PathBuf,
    /// Ignored when --config is given.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Overrides the preset or configuration file.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides the preset or configuration file.
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "model.cidm")]
    pub model: PathBuf,
    #[arg(long, default_value = "features.cidf")]
    pub features: PathBuf,
    /// Which part of the training split to score.
    #[arg(long, value_enum, default_value_t = Split::All)]
    pub split: Split,
}

#[derive(Debug, Clone, Args)]
pub struct ClassifyArgs {
    #[arg(long, default_value = "model.cidm")]
    pub model: PathBuf,
    /// Assembly source of the program.
    pub program: PathBuf,
    #[arg(long, default_value_t = extract::DEFAULT_STEP_LIMIT)]
    pub step_limit: u64,
}

#[derive(Debug, Clone, Args)]
pub struct HypersearchArgs {
    #[arg(long, default_value = "features.cidf")]
    pub features: PathBuf,
    /// Search space as JSON; a built-in space is used otherwise.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub trials: usize,
    #[arg(long, default_value_t = 10)]
    pub probe_epochs: usize,
}

/// Global options shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub workdir: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub quiet: bool,
}

impl Context {
    pub fn new(workdir: impl Into<PathBuf>) -> Context {
        Context {
            workdir: workdir.into(),
            ..Default::default()
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    /// `--out` if given, otherwise `default` under the working directory.
    pub fn out_or(&self, default: &str) -> PathBuf {
        self.resolve(self.out.as_deref().unwrap_or(Path::new(default)))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub(crate) fn progress(&self, msg: std::fmt::Arguments) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

/// Parse-independent entry point: run `cli`, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let ctx = Context {
        workdir: cli.workdir.unwrap_or_else(|| PathBuf::from(".")),
        seed: cli.seed,
        out: cli.out,
        config: cli.config,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Synth(a) => synth::run(&ctx, &a, out).map(drop),
        Command::Extract(a) => extract::run(&ctx, &a, out).map(drop),
        Command::Train(a) => train::run(&ctx, &a, out).map(drop),
        Command::Eval(a) => eval::run(&ctx, &a, out).map(drop),
        Command::Classify(a) => classify::run(&ctx, &a, out).map(drop),
        Command::Hypersearch(a) => hypersearch::run(&ctx, &a, out).map(drop),
    }
}
