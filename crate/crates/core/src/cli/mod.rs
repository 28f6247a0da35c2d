//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal error.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::Error;

pub const VERSION_STRING: &str = concat!(env!("CARGO_PKG_VERSION"), " (checkpoint format 1)");

#[derive(Debug, Parser)]
#[command(name = "langpaint", version = VERSION_STRING, about = "Per-language weight interpolation for multilingual text classifiers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Master seed; overrides the seed in --config or a synthetic spec.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pipeline configuration (JSON). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads. Changes wall time only, never outputs.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DataSource {
    /// Use a built-in synthetic preset (three-lang, shift, no-shift).
    #[arg(long)]
    pub preset: Option<String>,
    /// Synthetic corpus spec (JSON).
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train.csv and test.csv.
    GenData {
        #[command(flatten)]
        source: DataSource,
    },
    /// Remove texts overlapping between train and dev.
    Clean {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
    },
    /// Stratified split (--fractions) or k folds (--folds).
    Split {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated fractions, e.g. 0.8,0.1,0.1.
        #[arg(long, conflicts_with = "folds")]
        fractions: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        /// label | language-label
        #[arg(long, default_value = "language-label")]
        strata: String,
    },
    /// Train the multilingual model.
    TrainMl {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
    },
    /// Fine-tune one language from a multilingual checkpoint.
    Finetune {
        #[arg(long)]
        ml: PathBuf,
        #[arg(long)]
        language: String,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
    },
    /// Sweep alpha between a specialist and the multilingual checkpoint.
    Sweep {
        #[arg(long)]
        ls: PathBuf,
        #[arg(long)]
        ml: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// start:stop:step
        #[arg(long, default_value = "0:1:0.1")]
        grid: String,
    },
    /// Full pipeline into a run directory.
    Run {
        #[arg(long, requires = "val")]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Single corpus split 80-20 into train and validation.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        source: DataSource,
    },
    /// Train a k-fold ensemble.
    Ensemble {
        #[arg(long)]
        train: Option<PathBuf>,
        /// Optional dev corpus conjoined with --train.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[command(flatten)]
        source: DataSource,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// merged | ls
        #[arg(long, default_value = "merged")]
        member: String,
    },
    /// Predict one text or a batch file (columns text,language).
    Predict {
        /// Run or ensemble directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, requires = "language")]
        text: Option<String>,
        #[arg(long)]
        language: Option<String>,
        #[arg(long, conflicts_with = "text")]
        batch: Option<PathBuf>,
        /// ls | ml | langpaint (run directories only)
        #[arg(long, default_value = "langpaint")]
        method: String,
    },
    /// Evaluate a run or ensemble directory on a corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "langpaint")]
        method: String,
    },
    /// Protocol 1: 80-20 resampling, fixed test set.
    Exp1 {
        #[command(flatten)]
        source: DataSource,
        /// Pool of train and dev data (instead of a synthetic source).
        #[arg(long, requires = "test")]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        /// Also save every run's model under runs/run_<r>/.
        #[arg(long)]
        save_models: bool,
    },
    /// Protocol 2: 80-10-10 resampling.
    Exp2 {
        #[command(flatten)]
        source: DataSource,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pool the test part is drawn from (label-shifted data).
        #[arg(long)]
        shifted: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        save_models: bool,
    },
    /// Aggregate sweep curves and evaluation reports.
    Report {
        /// sweep_curves.csv files.
        #[arg(long, num_args = 1..)]
        curves: Vec<PathBuf>,
        /// eval.json files.
        #[arg(long, num_args = 1..)]
        evals: Vec<PathBuf>,
    },
}

#[derive(Debug)]
pub(crate) enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

fn subcommand_help(argv: &[OsString]) -> String {
    let mut cmd = Cli::command();
    let name = argv
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find(|a| !a.starts_with('-'))
        .map(str::to_string);
    if let Some(name) = name {
        if let Some(sub) = cmd.find_subcommand_mut(&name) {
            return sub.render_help().to_string();
        }
    }
    cmd.render_help().to_string()
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run(argv: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{e}");
            eprintln!("{}", subcommand_help(&argv));
            return 1;
        }
    };
    if cli.global.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return 1;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("internal error: {e}");
            return 3;
        }
    };
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        pool.install(|| commands::dispatch(&cli.global, &cli.command))
    }));
    match result {
        Ok(Ok(())) => 0,
        Ok(Err(CliError::Usage(msg))) => {
            eprintln!("error: {msg}");
            eprintln!("{}", subcommand_help(&argv));
            1
        }
        Ok(Err(CliError::Data(e))) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Error>().is_some_and(Error::is_internal) {
                3
            } else {
                2
            }
        }
        Err(_) => {
            eprintln!("internal error: panic");
            3
        }
    }
}
