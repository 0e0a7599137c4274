use thiserror::Error;

use crate::skeleton::Violation;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// The skeleton is structurally invalid, or a node reference is wrong.
    #[error("invalid skeleton: {}", format_violations(.0))]
    Structure(Vec<Violation>),

    #[error("unknown node {0}")]
    UnknownNode(u32),

    /// A numeric parameter is outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A value, base parameter or record does not match its base space.
    #[error("domain mismatch: {0}")]
    Domain(String),

    /// Objects produced from different registries or modes were combined.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported base space for exact enumeration: {0}")]
    UnsupportedSpace(String),

    #[error(
        "optimizer did not converge after {iterations} iterations \
         (gradient norm {grad_norm:.3e}, objective {objective:.6e})"
    )]
    Convergence {
        iterations: usize,
        grad_norm: f64,
        objective: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
