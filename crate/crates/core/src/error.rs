use thiserror::Error;

/// Errors raised by the simulator, auditors and I/O layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value {value} at cell ({i},{j})")]
    NonFinite { i: usize, j: usize, value: f64 },

    #[error("no-flux contract violated: nonzero boundary face {axis}[{index}] = {value}")]
    BoundaryFlux {
        axis: char,
        index: usize,
        value: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inadmissible initial data: {0}")]
    InadmissibleData(String),

    #[error("nonpositive {field} = {value} at cell ({i},{j})")]
    Nonpositive {
        field: &'static str,
        i: usize,
        j: usize,
        value: f64,
    },

    #[error("positivity violation (reduce dt): u = {value} at cell ({i},{j}), t = {t}")]
    PositivityViolation {
        i: usize,
        j: usize,
        value: f64,
        t: f64,
    },

    #[error("solver stagnation: relative residual {residual} after {iterations} iterations")]
    SolverStagnation { iterations: usize, residual: f64 },

    #[error("positivity/threshold: max u = {max_u} exceeded blow-up threshold {threshold} at t = {t} (numerical failure, estimated T_max = {t})")]
    BlowupThreshold { max_u: f64, threshold: f64, t: f64 },

    #[error("ambiguous case selection: l = {0} is within 1e-9 of 2 or 3")]
    AmbiguousCase(f64),

    #[error("missing constant: {0}")]
    MissingConstant(String),

    #[error("missing series: {0}")]
    MissingSeries(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("inequality unsatisfiable in c: sample {sample} has LHS excess {excess} but zero c-coefficient")]
    Unsatisfiable { sample: usize, excess: f64 },

    #[error("config error at line {line}, key `{key}`: {msg}")]
    Config {
        line: usize,
        key: String,
        msg: String,
    },

    #[error("schema drift: {0}")]
    Schema(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
