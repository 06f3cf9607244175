//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by the estimators, decompositions and the simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix argument contained NaN or infinite entries.
    #[error("matrix `{name}` contains a non-finite entry at ({row}, {col})")]
    NonFinite {
        name: &'static str,
        row: usize,
        col: usize,
    },

    /// Matrix shapes do not conform for the requested operation.
    #[error("dimension mismatch: {context} (left {left_rows}x{left_cols}, right {right_rows}x{right_cols})")]
    DimensionMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// An iterative decomposition did not converge.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A matrix that must be symmetric positive semi-definite is not.
    #[error("matrix is not positive semi-definite: smallest eigenvalue {min_eigenvalue:.3e}")]
    NotPsd { min_eigenvalue: f64 },

    /// A matrix that must be symmetric is not.
    #[error("matrix is not symmetric: max |m_ij - m_ji| = {asymmetry:.3e}")]
    NotSymmetric { asymmetry: f64 },

    /// A scalar or index argument is outside its admissible range.
    #[error("argument out of range: {0}")]
    OutOfRange(String),

    /// The design has no residual degrees of freedom (m = rank(X)), so the
    /// noise variance cannot be estimated.
    #[error("degenerate design: rank(X) = {rank_q} equals the number of observations m = {m}")]
    DegenerateDesign { m: usize, rank_q: usize },

    /// An experiment or solver configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Trimming removed every value.
    #[error("trimmed mean is undefined: no values survive trimming {n} values at fraction {fraction}")]
    EmptyAfterTrim { n: usize, fraction: f64 },

    /// A Monte Carlo check was run on draws that mostly violate the premise
    /// of the bound being checked.
    #[error("invalid premise: {0}")]
    InvalidPremise(String),

    /// A CSV matrix file could not be parsed.
    #[error("malformed CSV at line {line}, column {column}: {message}")]
    MalformedCsv {
        line: usize,
        column: usize,
        message: String,
    },

    /// Underlying I/O error while reading or writing files.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
