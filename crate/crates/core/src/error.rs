use thiserror::Error;

/// Errors raised across the library. Variants mirror the failure classes of
/// the individual operations so callers can match on them directly.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown variable `{0}`")]
    Name(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("joint of {cells} cells exceeds the cap of {cap}")]
    TooLarge { cells: u128, cap: usize },

    #[error("evidence has zero probability: {0}")]
    DegenerateEvidence(String),

    #[error("contingency table has an empty {axis} `{label}`")]
    DegenerateContingency { axis: &'static str, label: String },

    #[error("cannot balance: cell {cell} has no support")]
    UnbalanceableSupport { cell: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("edge {from} -> {to} does not exist")]
    Edge { from: String, to: String },

    #[error("labeling error: {0}")]
    Label(String),

    #[error("predictor undefined on reachable state {0}")]
    Coverage(String),

    #[error("no factorization violation found for {example} after {tries} seeds")]
    CounterexampleNotFound { example: String, tries: usize },

    #[error("invalid generator spec: {0}")]
    Spec(String),

    #[error("sample of size {0} is too small for the U-statistic (need >= 2)")]
    SampleSize(usize),

    #[error("non-finite value in {0}")]
    Numerics(String),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}
