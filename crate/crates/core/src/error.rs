use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("node index {index} out of range for a model with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("node {0} listed more than once")]
    DuplicateNode(usize),

    #[error("invalid edge ({0}, {1})")]
    InvalidEdge(usize, usize),

    #[error("state entry {index} is {value}, expected 0 or 1")]
    NonBinaryState { index: usize, value: u8 },

    #[error("{n} nodes exceeds the enumeration cap of {cap} (2^{n} states); raise the cap explicitly to proceed")]
    TooLarge { n: usize, cap: usize },

    #[error("structure is not decimatable: {remaining} nodes remain and every one has degree > 2")]
    NotDecimatable { remaining: usize },

    #[error("elimination order is invalid at step {step}: {reason}")]
    InvalidOrder { step: usize, reason: String },

    #[error("mean {value} at index {index} lies outside [0, 1]")]
    MeanOutOfRange { index: usize, value: f64 },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

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

    pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found })
        }
    }
}
