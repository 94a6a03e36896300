use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("history record must start at {expected}, got {got}")]
    HistoryGap { expected: f64, got: f64 },

    #[error("history does not cover [{start}, {end}] (stored span [{stored_start}, {stored_end}])")]
    Coverage {
        start: f64,
        end: f64,
        stored_start: f64,
        stored_end: f64,
    },

    #[error("non-finite state at step {step}")]
    NonFiniteStep { step: usize },

    #[error("non-finite state at t = {time}")]
    NonFiniteTime { time: f64 },

    #[error("grid count {required:.3e} exceeds the cap {cap}")]
    GridCountExceeded { required: f64, cap: u64 },

    #[error("could not bracket the inverse of `{handle}` at y = {target}")]
    Bracket { handle: String, target: f64 },

    #[error("A+BK is not Hurwitz: eigenvalue {re} + {im}i")]
    NotHurwitz { re: f64, im: f64 },

    #[error("{0} did not converge")]
    NonConvergence(&'static str),

    #[error("numeric overflow in {0}")]
    Overflow(&'static str),

    #[error("step size h = {h} exceeds the admissible bound {bound}")]
    StepTooLarge { h: f64, bound: f64 },

    #[error("matrix dimension {n} exceeds the dense solver limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("trajectory spans {span} s, need at least {needed} s")]
    TrajectoryTooShort { span: f64, needed: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
