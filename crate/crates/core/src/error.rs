use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient sub-ensembles for error estimation: need at least 2, got {0}")]
    InsufficientRepeats(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{operation} requires the {required} representation")]
    WrongOrdering {
        operation: &'static str,
        required: &'static str,
    },

    #[error(
        "Wigner ensembles require a unitary transmission matrix \
         (deviation {deviation:.3e} exceeds {tolerance:.1e})"
    )]
    NonUnitaryWigner { deviation: f64, tolerance: f64 },

    #[error("invalid grouping: {0}")]
    Grouping(String),

    #[error("enumeration over {0} detectors exceeds the cap of {1}")]
    TooManyDetectors(usize, usize),

    #[error("chi-square comparison has no valid bins")]
    NoValidBins,

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}
