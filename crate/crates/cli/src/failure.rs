use haptosim::Error;

/// Process exit codes.
pub mod code {
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const BREAKDOWN: u8 = 3;
    pub const NONCONVERGENCE: u8 = 4;
    pub const VERIFICATION: u8 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(Error),
    #[error("numerical breakdown at t = {time}: {reason}")]
    Breakdown { time: f64, reason: String },
    #[error("{0}")]
    NonConvergence(String),
    #[error("{count} verification check(s) failed")]
    Verification { count: usize },
    #[error("{failed} of {total} sweep runs did not complete")]
    Sweep { failed: usize, total: usize, code: u8 },
    #[error(transparent)]
    Other(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => code::CONFIG,
            CliError::Breakdown { .. } => code::BREAKDOWN,
            CliError::NonConvergence(_) => code::NONCONVERGENCE,
            CliError::Verification { .. } => code::VERIFICATION,
            CliError::Sweep { code, .. } => *code,
            CliError::Other(_) => code::OTHER,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Parse { .. } | Error::Interpolation { .. } => CliError::Config(e),
            Error::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            Error::Verification(_) => CliError::Verification { count: 1 },
            other => CliError::Other(other),
        }
    }
}
