//! Command-line front end: `build-vocab`, `train`, `translate`, `evaluate`,
//! `neighbors` and `gradcheck`.

mod commands;
mod run_config;

use std::ffi::OsString;
use std::fmt;

use clap::{Parser, Subcommand};

pub use commands::prepare_line;
pub use run_config::{Mode, RunConfig};

/// Exit status of a successful run.
pub const EXIT_OK: i32 = 0;
/// Bad invocation: unknown subcommand, missing flag, invalid config file.
pub const EXIT_USAGE: i32 = 1;
/// Unreadable or malformed corpus, checkpoint or other input data.
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Data(e) => write!(f, "{e:#}"),
        }
    }
}

pub(crate) fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

pub(crate) fn data(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Data(e.into())
}

#[derive(Debug, Parser)]
#[command(name = "charmt", version, about = "Hierarchical character-level neural machine translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build word and character vocabularies from the training corpus.
    BuildVocab {
        /// Run configuration (JSON).
        #[arg(long)]
        config: std::path::PathBuf,
    },
    /// Train a model; character models go through the layer-wise schedule.
    Train {
        #[arg(long)]
        config: std::path::PathBuf,
    },
    /// Translate one sentence per line.
    Translate {
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        /// Input file; standard input when omitted.
        #[arg(long)]
        input: Option<std::path::PathBuf>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        output: Option<std::path::PathBuf>,
        /// Word beam width (overrides the checkpoint config).
        #[arg(long)]
        beam_kw: Option<usize>,
        /// Character beam width (overrides the checkpoint config).
        #[arg(long)]
        beam_kc: Option<usize>,
    },
    /// Corpus BLEU of a candidate file against a reference file, as JSON.
    Evaluate {
        candidates: std::path::PathBuf,
        references: std::path::PathBuf,
        /// Add-one smoothing for n > 1 (for tiny test sets).
        #[arg(long)]
        smoothing: bool,
        /// Lowercase both files before scoring.
        #[arg(long)]
        lowercase: bool,
    },
    /// Nearest in-vocabulary words by cosine similarity.
    Neighbors {
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        #[arg(long, value_enum, default_value = "source")]
        side: SideArg,
        #[arg(long, value_enum, default_value = "c2w")]
        provider: ProviderArg,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        #[arg(required = true)]
        words: Vec<String>,
    },
    /// Finite-difference check of every model component.
    Gradcheck {
        /// Run configuration or bare model config (JSON); defaults otherwise.
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SideArg {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ProviderArg {
    Lookup,
    C2w,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors are reported on standard error.
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
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
