mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// ECG wave delineation: preprocessing, training, evaluation and
/// delineation of WFDB records.
#[derive(Debug, Parser)]
#[command(name = "ecgdl", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration file (`[section]` and `key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.alpha=0.002`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads. All computation currently runs on one thread, which
    /// is what makes results bitwise reproducible.
    #[arg(long, default_value_t = 1, global = true)]
    pub threads: usize,
    /// Recompute even if the output manifest matches the inputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Db {
    /// Boundary-annotated database (`.q1c`/`.pu0` annotators by default).
    Qtdb,
    /// Beat-annotated database (`.atr` annotator).
    Mitdb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    /// Sample-level confusion matrix, Se/P+/F and ROC on test segments.
    Samples,
    /// Beat detection against reference beat annotations.
    Qrs,
    /// Onset/peak/offset matching per wave fiducial.
    Boundaries,
}

#[derive(Debug, Args)]
pub struct RecordSource {
    /// Directory holding WFDB records [env: ECGDL_DATA]
    #[arg(long = "in", env = "ECGDL_DATA", hide_env = true)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "qtdb")]
    pub db: Db,
    /// Comma-separated record names (default: all records in the directory).
    #[arg(long, value_delimiter = ',')]
    pub records: Vec<String>,
    /// Use the test records of this split file.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read, filter, label and segment every record into a cache.
    Preprocess {
        #[command(flatten)]
        source: RecordSource,
        /// Cache directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Record-disjoint train/test split of a preprocessed cache.
    Split {
        #[arg(long)]
        cache: PathBuf,
        /// Output file (default: <cache>/split.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model (one fold held out for early stopping) or run k-fold CV.
    Train {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cv: bool,
    },
    /// Random search over the Adam hyperparameters.
    Search {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "samples")]
        task: Task,
        /// Segment cache (for `--task samples`).
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        source: RecordSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label whole records and write their P/QRS/T onset, peak and offset.
    Delineate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: RecordSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic annotated records (WFDB, `.q1c` annotator) for trials
    /// without a real database.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        records: usize,
        #[arg(long, default_value_t = 60.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Turn a JSON report into delimiter-separated tables.
    Export {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
