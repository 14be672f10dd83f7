//! Crate-wide error type.
//!
//! Numerical failure modes (positivity loss, stiffness, stalled solves) are
//! first-class variants so callers can distinguish "bad input" from "the
//! scheme gave up" without string matching.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed user input: inconsistent domain, bad descriptor, unknown
    /// sweep path, unreadable config. Maps to exit code 2 in the CLI.
    #[error("config error: {0}")]
    Config(String),

    /// A density that must stay strictly positive did not.
    #[error("positivity lost at t = {t}: u[{cell}] = {value:e}")]
    PositivityLoss { t: f64, cell: usize, value: f64 },

    /// The signal field touched zero or below; the sensitivity 1/v is singular.
    #[error("signal floor violated: min v = {min_v:e}")]
    SingularSignal { min_v: f64 },

    /// A negative or fractional power moment hit a cell outside its domain
    /// of definition.
    #[error("moment with exponent {exponent} undefined: field[{cell}] = {value:e}")]
    UndefinedMoment {
        exponent: f64,
        cell: usize,
        value: f64,
    },

    /// An iterative linear solve failed to reach its residual target.
    #[error("linear solve stalled: residual {residual:e} after {iterations} iterations")]
    SolveStalled { residual: f64, iterations: usize },

    /// The adaptive step controller was squeezed below dt_min.
    #[error("stiffness at t = {t}: required dt {required:e} < dt_min {dt_min:e}")]
    Stiffness { t: f64, required: f64, dt_min: f64 },

    /// Arithmetic produced a structurally impossible value (e.g. a
    /// non-positive Green kernel column). Indicates a solver breakdown, not
    /// bad user input.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// I/O failure while writing or reading a run ledger artifact.
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Helper for wrapping I/O errors with the offending path.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
