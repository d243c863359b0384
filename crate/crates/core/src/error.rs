use std::path::Path;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}:{column}: {message}")]
    Parse {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid FOR (bus {bus}): {message}")]
    InvalidFor { bus: usize, message: String },
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("singular Jacobian")]
    SingularJacobian,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("segmentation of bus {bus} failed: segment {segment} has inscribed deficit {deficit:.4e} pu")]
    InscribedDeficit {
        bus: usize,
        segment: usize,
        deficit: f64,
    },
    #[error("voltage {v} outside the FOR slice range [{lo}, {hi}]")]
    VoltageOutOfRange { v: f64, lo: f64, hi: f64 },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("numerical breakdown in simplex: {0}")]
    Numerical(String),
    #[error("{method} dispatch is infeasible (binding family: {family})")]
    Infeasible { method: String, family: String },
    #[error("{method} dispatch stopped at the node limit without an incumbent")]
    NoIncumbent { method: String },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
