//! `eceth` command-line front end.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eceth_core::calibration::BinStrategy;
use eceth_core::data::write_text;
use eceth_core::error::EcethError;
use eceth_core::estimator::BinCount;
use eceth_core::nuisance::ScoreMethod;
use eceth_core::scores::Pooling;

pub use config::{RunConfig, SimGrid, SEED_ENV};

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input data (exit code 2).
    Validation(String),
    /// Estimation failed on valid input (exit code 3).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "estimation failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<EcethError> for CliError {
    fn from(e: EcethError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eceth", version, about = "Calibration error of CATE predictions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the calibration error of the predictions in a CSV (JSON report).
    Evaluate(Flags),
    /// Run a Monte-Carlo scenario grid from the config file.
    Simulate(Flags),
    /// Per-bin calibration curve as CSV.
    PlotData(Flags),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScoreArg {
    Ipw,
    Aipw,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PoolingArg {
    Pooled,
    PerFold,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Freq,
    Width,
}

/// Flags shared by all subcommands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// JSON config file; flags take precedence over its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub outcome_col: Option<String>,
    #[arg(long)]
    pub treatment_col: Option<String>,
    #[arg(long)]
    pub prediction_col: Option<String>,
    /// Comma-separated feature columns (default: all remaining columns).
    #[arg(long, value_delimiter = ',')]
    pub feature_cols: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub score: Option<ScoreArg>,
    /// Known treatment probability (randomized designs).
    #[arg(long)]
    pub known_pi: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    /// Number of bins or `auto`.
    #[arg(long)]
    pub bins: Option<BinCount>,
    #[arg(long, value_enum)]
    pub bin_strategy: Option<StrategyArg>,
    /// Bootstrap resamples (0 disables the bootstrap).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Confidence level of the bootstrap interval.
    #[arg(long)]
    pub level: Option<f64>,
    /// Tolerance for the test of `θ ≥ ε`; repeatable.
    #[arg(long)]
    pub epsilon: Vec<f64>,
    /// Random seed (falls back to the ECETH_SEED environment variable).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output file (evaluate, plot-data) or directory (simulate).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Flags {
    /// Config file (or defaults) with every given flag applied, seed
    /// resolved, and validated.
    pub fn resolve(&self, seed_env: Option<&str>) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.input {
            c.input = Some(v.clone());
        }
        if let Some(v) = &self.outcome_col {
            c.columns.outcome = v.clone();
        }
        if let Some(v) = &self.treatment_col {
            c.columns.treatment = v.clone();
        }
        if let Some(v) = &self.prediction_col {
            c.columns.prediction = Some(v.clone());
        }
        if let Some(v) = &self.feature_cols {
            c.columns.features = Some(v.clone());
        }
        if let Some(v) = self.score {
            c.score = match v {
                ScoreArg::Ipw => ScoreMethod::Ipw,
                ScoreArg::Aipw => ScoreMethod::Aipw,
            };
        }
        if let Some(v) = self.known_pi {
            c.known_pi = Some(v);
        }
        if let Some(v) = self.folds {
            c.folds = v;
        }
        if let Some(v) = self.pooling {
            c.pooling = match v {
                PoolingArg::Pooled => Pooling::Pooled,
                PoolingArg::PerFold => Pooling::PerFold,
            };
        }
        if let Some(v) = self.bins {
            c.bins = v;
        }
        if let Some(v) = self.bin_strategy {
            c.bin_strategy = match v {
                StrategyArg::Freq => BinStrategy::EqualFrequency,
                StrategyArg::Width => BinStrategy::EqualWidth,
            };
        }
        if let Some(v) = self.bootstrap {
            c.bootstrap = v;
        }
        if let Some(v) = self.level {
            c.level = v;
        }
        if !self.epsilon.is_empty() {
            c.epsilon = self.epsilon.clone();
        }
        if let Some(v) = self.seed {
            c.seed = Some(v);
        }
        if let Some(v) = self.threads {
            c.threads = Some(v);
        }
        if let Some(v) = &self.out {
            c.out = Some(v.clone());
        }
        c.resolve_seed(seed_env)?;
        c.validate()?;
        Ok(c)
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(p) => Ok(write_text(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Runtime(format!("cannot start thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

/// Runs one parsed command; `seed_env` is the value of [`SEED_ENV`].
pub fn run(cli: &Cli, seed_env: Option<&str>) -> Result<(), CliError> {
    match &cli.command {
        Command::Evaluate(flags) => {
            let c = flags.resolve(seed_env)?;
            let report = with_threads(c.threads, || commands::evaluate(&c))?;
            emit(&commands::to_json(&report)?, c.out.as_ref())
        }
        Command::PlotData(flags) => {
            let c = flags.resolve(seed_env)?;
            let csv = with_threads(c.threads, || commands::plot_data(&c))?;
            emit(&csv, c.out.as_ref())
        }
        Command::Simulate(flags) => {
            let c = flags.resolve(seed_env)?;
            let report = with_threads(c.threads, || commands::simulate(&c))?;
            match &c.out {
                Some(dir) => commands::write_simulation(&report, dir),
                None => emit(&report.tables_markdown(), None),
            }
        }
    }
}
