use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Numerical,
    PartialFailure,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Validation => 2,
            ErrorCategory::Numerical => 3,
            ErrorCategory::PartialFailure => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorCategory::Validation => "VALIDATION",
            ErrorCategory::Numerical => "NUMERICAL",
            ErrorCategory::PartialFailure => "PARTIAL_FAILURE",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty file: {0}")]
    EmptyFile(PathBuf),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: non-binary treatment value `{value}`")]
    NonBinaryTreatment { row: usize, value: String },
    #[error("row {row}: unmapped level `{level}` for covariate `{covariate}`")]
    UnmappedLevel {
        row: usize,
        covariate: String,
        level: String,
    },
    #[error("row {row}: non-numeric or non-finite outcome `{value}`")]
    BadOutcome { row: usize, value: String },
    #[error("row {row}: missing value in column `{column}`")]
    MissingField { row: usize, column: String },
    #[error("covariate `{0}` has fewer than 2 levels")]
    TooFewLevels(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("manifest line {line}: {message}")]
    ManifestSyntax { line: usize, message: String },
    #[error("duplicate subgroup `{0}` in manifest")]
    DuplicateSubgroup(String),
    #[error("subgroup `{0}`: ci95 upper bound is below lower bound")]
    InvertedInterval(String),
    #[error("subgroup `{0}` constrains every covariate and is not coarser than the target subgroups")]
    NotCoarser(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("subgroup `{subgroup}` has no {arm} records; the saturated model is not identified")]
    Unidentified { subgroup: String, arm: &'static str },
    #[error("q must be < p (q = {q}, p = {p})")]
    TooManyConstraints { q: usize, p: usize },
    #[error("record {0} has leverage numerically equal to 1 (degenerate cell)")]
    DegenerateLeverage(usize),
    #[error("rank-deficient matrix: {0}")]
    RankDeficient(String),
    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical invariant violated: {0}")]
    Invariant(String),
    #[error("{failed} of {total} replications failed at e = {e} (limit 1%)")]
    TooManyFailures { e: f64, failed: usize, total: usize },
    #[error("malformed results file: {0}")]
    Results(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            DegenerateLeverage(_)
            | RankDeficient(_)
            | NotPsd(_)
            | Invariant(_) => ErrorCategory::Numerical,
            TooManyFailures { .. } => ErrorCategory::PartialFailure,
            _ => ErrorCategory::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
