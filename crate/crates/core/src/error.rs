use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// Variants are grouped by the exit-code family the command-line front-end
/// maps them to (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    // --- configuration / parameters (exit 2) ---
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    // --- data (exit 3) ---
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("truncated payload {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("harmonization needs at least two sites (found {0}); bypass the harmonize stage for single-site data")]
    SingleSite(usize),

    #[error("site `{0}` is not in the harmonization model roster")]
    UnknownSite(String),

    #[error("no common support: treated scores [{treated_lo}, {treated_hi}] and control scores [{control_lo}, {control_hi}] do not overlap")]
    NoSupport {
        treated_lo: f64,
        treated_hi: f64,
        control_lo: f64,
        control_hi: f64,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // --- numeric / convergence (exit 4) ---
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("undefined effect size: pooled standard deviation is zero")]
    UndefinedEffect,

    #[error("undefined AUC: labels contain a single class")]
    UndefinedAuc,

    #[error("perfect separation in propensity model (|coefficient| = {magnitude:.2} > 15 in standardized units); review covariates or use a caliper")]
    Separation { magnitude: f64 },

    #[error("propensity model did not converge after {iterations} iterations; log-likelihood trace: {trace:?}")]
    NonConvergence { iterations: usize, trace: Vec<f64> },

    #[error("no feature reached accuracy threshold {threshold}; best single-feature accuracy was {max_accuracy:.4}")]
    EmptySelection { threshold: f64, max_accuracy: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code: 2 config, 3 data, 4 numeric/convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::UndefinedRatio(_)
            | Error::UndefinedEffect
            | Error::UndefinedAuc
            | Error::Separation { .. }
            | Error::NonConvergence { .. }
            | Error::EmptySelection { .. }
            | Error::Numeric(_) => 4,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
