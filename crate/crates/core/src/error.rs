use std::path::PathBuf;

use crate::stepper::FixedPointReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is missing, malformed or out of range.
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    /// Syntax error in a `key = value` configuration file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("interpolated function is not finite at node {node} ({value})")]
    Interpolation { node: usize, value: f64 },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// The linear solver could not reach the requested relative residual.
    #[error("linear solve failed after {iterations} iterations: relative residual {residual:e}")]
    SolverFailure { residual: f64, iterations: usize },

    /// A linear solve inside the fixed-point loop failed.
    #[error("step to t = {time} failed in the {field} equation at fixed-point pass {pass}: {source}")]
    Step {
        time: f64,
        field: &'static str,
        pass: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "fixed-point iteration did not converge at t = {time} after {} passes (last residuals {:?})",
        report.iterations,
        report.residuals
    )]
    NonConvergence { time: f64, report: FixedPointReport },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
