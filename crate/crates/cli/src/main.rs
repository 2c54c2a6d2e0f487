//! `fedcontrib`: train models and measure party contributions from the
//! command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (including a failed
//! privacy audit), 3 numeric failure.

mod commands;
mod plot;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedcontrib::{ErrorClass, FedError};

#[derive(Parser, Debug)]
#[command(
    name = "fedcontrib",
    version,
    about = "Contribution measurement for federated learning"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// CSV file with a header row; `?` marks a missing value.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Binary (0/1) target column.
    #[arg(long, global = true, default_value = "Biopsy")]
    pub target: String,
    /// Comma-separated feature columns. Defaults to the 15 cervical risk
    /// factors when all are present, otherwise every non-target column.
    #[arg(long, global = true, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// Root seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Model family for `train` and `horizontal`.
    #[arg(long, global = true, value_enum, default_value_t = ModelChoice::KernelRbf)]
    pub model: ModelChoice,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Also write tabular CSV views of the reports when `csv`.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Logistic,
    KernelRbf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// L2 regularisation strength.
    #[arg(long, default_value_t = 1.0)]
    pub l2: f64,
    /// RBF kernel width; defaults to 1/d.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Iteration cap for the logistic solver.
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Seeded train/test split, fit, write model.json and metrics.json.
    Train {
        #[command(flatten)]
        model_args: ModelArgs,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
    },
    /// Deletion influence of each party in a seeded horizontal split.
    Horizontal {
        #[command(flatten)]
        model_args: ModelArgs,
        #[arg(long, default_value_t = 5)]
        parties: usize,
        #[arg(long, value_enum, default_value_t = HorizontalMethod::Batch)]
        method: HorizontalMethod,
    },
    /// Shapley values of a trained model's predictions.
    Shapley {
        /// Model artifact; defaults to <out-dir>/model.json.
        #[arg(long)]
        model_file: Option<PathBuf>,
        /// A row index, a comma-separated list of indices, or `all`.
        #[arg(long)]
        instance: String,
        #[arg(long, value_enum, default_value_t = ShapleyChoice::Exact)]
        method: ShapleyChoice,
        /// Permutations per feature for `mc`.
        #[arg(long = "m", default_value_t = 2000)]
        iterations: usize,
        /// Background convention; exact defaults to the median reference,
        /// mc to sampled background rows.
        #[arg(long, value_enum)]
        background: Option<BackgroundChoice>,
        /// With `all`, keep a seeded subsample of this many instances.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Federated group Shapley values over a simulated vertical federation.
    Vertical {
        #[arg(long)]
        model_file: Option<PathBuf>,
        /// Number of parties; features are split into contiguous blocks.
        #[arg(long, default_value_t = 5)]
        groups: usize,
        #[arg(long = "m", default_value_t = 1000)]
        iterations: usize,
        /// `all`, or a count for a seeded subsample of instances.
        #[arg(long, default_value = "all")]
        instances: String,
        #[arg(long, value_enum, default_value_t = VerticalMode::PerParty)]
        mode: VerticalMode,
        /// Also estimate the non-federated features in each per-party run.
        #[arg(long)]
        with_others: bool,
        /// Write the protocol transcript of the first instance as JSON lines.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Check a protocol transcript for leaks to the evaluator.
    Audit {
        #[arg(long)]
        transcript: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizontalMethod {
    Batch,
    Summed,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapleyChoice {
    Exact,
    Mc,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundChoice {
    Reference,
    Sampled,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerticalMode {
    PerParty,
    AllAtOnce,
}

/// Bad flags or flag combinations.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A completed run whose outcome is a data-level failure (failed audit).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct DataFailure(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<FedError>() {
            return match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            };
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if cause.downcast_ref::<DataFailure>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
        {
            return 2;
        }
    }
    2
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("FEDCONTRIB_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            UsageError(format!(
                "FEDCONTRIB_THREADS must be a positive integer, got {v:?}"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| UsageError(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match configure_threads().and_then(|_| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
