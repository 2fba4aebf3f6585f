//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A table has the wrong shape (wrong number of slices, rows of the
    /// wrong length, ...). The offending slice is named in the payload.
    #[error("structural error in {slice}: {detail}")]
    Structural { slice: String, detail: String },

    #[error("encoding error: {0}")]
    Encoding(String),

    /// The evaluation policy plays an action the behavior policy never plays.
    #[error("action coverage violation at step {step}: pi_e({action}|{obs}) = {pi_e} but pi_b = 0")]
    ActionCoverage {
        step: usize,
        obs: usize,
        action: usize,
        pi_e: f64,
    },

    /// An action in the data has positive evaluation probability but zero
    /// logged behavior probability.
    #[error("action coverage violation in trajectory {trajectory} at step {step}: logged pi_b = 0")]
    DataCoverage { trajectory: usize, step: usize },

    #[error("enumeration budget exceeded: need {needed} > budget {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },

    /// A covariance-style matrix failed the conditioning guard.
    #[error("ill-conditioned matrix {matrix} at step {step}: sigma_min = {sigma_min:.3e}")]
    IllConditioned {
        matrix: String,
        step: usize,
        sigma_min: f64,
    },

    #[error("positivity violation: {0}")]
    Positivity(String),

    /// Two algebraically identical computation routes disagreed.
    #[error("internal cross-check failed in {context}: difference {difference:.3e}")]
    CrossCheck { context: String, difference: f64 },

    #[error("empty function class")]
    EmptyClass,

    #[error("median-of-means misconfigured: {blocks} blocks > {samples} samples")]
    MedianOfMeans { blocks: usize, samples: usize },

    #[error("dataset fingerprint mismatch: dataset {found}, model {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("fixture generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
