use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EcethError>;

/// Every failure the library can report.
///
/// Variants fall in two families: input/configuration problems
/// ([`EcethError::is_validation`] returns `true`) and failures that happen
/// while estimating on otherwise valid input.
#[derive(Debug, Error)]
pub enum EcethError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("line {line}: treatment value `{value}` is not binary (expected 0, 1, true or false)")]
    InvalidTreatment { line: u64, value: String },

    #[error("line {line}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },

    #[error("line {line}, column `{column}`: missing value")]
    MissingValue { line: u64, column: String },

    #[error("line {line}, column `{column}`: value is not finite")]
    NonFinite { line: u64, column: String },

    #[error("input contains no data rows")]
    EmptyInput,

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("invalid fold count {folds} for {n} rows (need 2 <= J <= n)")]
    InvalidFoldCount { folds: usize, n: usize },

    #[error("treatment has a single arm ({treated} treated, {control} control); both arms are required")]
    DegenerateTreatment { treated: usize, control: usize },

    #[error("logistic fit diverged (max |coefficient| = {max_coef:.3e}); the data look separable, try an L2 penalty lambda > 0")]
    Separation { max_coef: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("propensity {0} is outside the open interval (0, 1)")]
    InvalidPropensity(f64),

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("bin count must be at least 1")]
    InvalidBinCount,

    #[error("{bins} bins requested for only {n} predictions")]
    TooManyBins { bins: usize, n: usize },

    #[error("all predictions are identical; cannot split them into {bins} bins")]
    DegeneratePredictions { bins: usize },

    #[error("bin {0} is empty")]
    EmptyBin(usize),

    #[error("bin {0} holds a single observation; leave-one-out mean is undefined")]
    SingletonBin(usize),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<EcethError>,
    },

    #[error("bootstrap infeasible: {redraws} consecutive resamples had a single treatment arm")]
    InfeasibleBootstrap { redraws: usize },

    #[error("standard error is zero; the t statistic is undefined")]
    DegenerateSe,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("replicate {index} (seed {seed}): {source}")]
    Replicate {
        index: usize,
        seed: u64,
        #[source]
        source: Box<EcethError>,
    },
}

impl EcethError {
    /// True for errors caused by malformed input or configuration, as
    /// opposed to failures during estimation.
    pub fn is_validation(&self) -> bool {
        use EcethError::*;
        match self {
            Io { .. }
            | Csv(_)
            | MissingColumn(_)
            | InvalidTreatment { .. }
            | Parse { .. }
            | MissingValue { .. }
            | NonFinite { .. }
            | EmptyInput
            | InvalidObservation(_)
            | InvalidFoldCount { .. }
            | InvalidBinCount
            | TooManyBins { .. }
            | InvalidConfig(_) => true,
            Fold { source, .. } | Replicate { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn in_fold(self, fold: usize) -> Self {
        EcethError::Fold {
            fold,
            source: Box::new(self),
        }
    }
}
