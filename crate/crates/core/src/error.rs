use thiserror::Error;

use crate::ModeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("vector field of mode {mode} is not finite at state {state:?}")]
    NumericalDomain { mode: ModeId, state: Vec<f64> },

    #[error("state {state:?} lies outside the domain box")]
    OutOfDomain { state: Vec<f64> },

    #[error("controlled Euler-invariance violated: no admissible mode at cell(s) {cells:?}")]
    InvarianceViolation { cells: Vec<usize> },

    #[error("hypothesis (H) violated for mode(s) {modes:?}: {hint}")]
    HypothesisViolation { modes: Vec<ModeId>, hint: String },

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("degenerate system: {0}")]
    Degenerate(String),

    #[error("reference integrator failed: {0}")]
    OracleFailure(String),

    #[error("enumeration of {patterns} patterns exceeds cap {cap}")]
    EnumerationCap { patterns: u128, cap: u128 },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Format(_) | Error::EnumerationCap { .. } => 2,
            Error::HypothesisViolation { .. } | Error::UnsupportedRegime(_) | Error::Degenerate(_) => 3,
            Error::InvarianceViolation { .. } => 4,
            Error::NumericalDomain { .. } | Error::OutOfDomain { .. } | Error::OracleFailure(_) => 5,
            Error::Internal(_) | Error::Io(_) => 1,
        }
    }

    /// Short machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::NumericalDomain { .. } => "numerical-domain",
            Error::OutOfDomain { .. } => "out-of-domain",
            Error::InvarianceViolation { .. } => "invariance-violation",
            Error::HypothesisViolation { .. } => "hypothesis-violation",
            Error::UnsupportedRegime(_) => "unsupported-regime",
            Error::Degenerate(_) => "degenerate-system",
            Error::OracleFailure(_) => "oracle-failure",
            Error::EnumerationCap { .. } => "enumeration-cap",
            Error::Internal(_) => "internal",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}
