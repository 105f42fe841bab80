use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("invalid config field `{field}`: {msg}")]
    InvalidField { field: &'static str, msg: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty combiner")]
    EmptyCombiner,

    #[error("cannot assign {rf} RF chains to {beams} distinct beams")]
    Structural { rf: usize, beams: usize },

    #[error("enumeration needs {needed} assignments, cap is {cap}; use random restarts instead")]
    EnumerationCap { needed: u128, cap: u128 },

    #[error("subproblem infeasible: constraint group `{0}` failed phase I")]
    Infeasible(String),

    #[error("invalid program: {0}")]
    InvalidProgram(String),

    #[error("malformed channel dump: {0}")]
    ChannelDump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
