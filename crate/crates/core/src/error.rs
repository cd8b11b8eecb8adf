use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} modes, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} = {value} is out of range ({range})")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{solver} did not converge: residual {residual:e} after {iterations} iterations")]
    SolverFailed {
        solver: &'static str,
        residual: f64,
        iterations: usize,
    },

    #[error("step {step} (t = {time}) failed: {message}")]
    StepFailed {
        step: usize,
        time: f64,
        message: String,
    },

    #[error("coercivity pair (c1 = {c1}, c2 = {c2}) violated at r = {at}")]
    CoercivityScan { c1: f64, c2: f64, at: f64 },

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("incompatible record: {0}")]
    IncompatibleRecord(String),

    #[error("config error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config rule `{rule}` violated: {message}")]
    ConfigRule { rule: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn out_of_range(what: &'static str, value: f64, range: impl Into<String>) -> Self {
        Error::OutOfRange {
            what,
            value,
            range: range.into(),
        }
    }
}
