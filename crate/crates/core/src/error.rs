use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid spacing {dx} under-resolves a kernel of width {width}")]
    UnderResolved { dx: f64, width: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid coefficient model: {0}")]
    InvalidModel(String),

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("eigenvector lost positivity at node {node}")]
    NotPositive { node: usize },

    #[error("no sign change: principal eigenvalue is {0} over the whole search range")]
    NoSignChange(SignRegime),

    #[error("kernel tail condition fails: mass below -2h0 is {0:e}")]
    TailCondition(f64),

    #[error("time step {dt} exceeds the positivity bound {limit}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("front reached the window edge at t = {t} (front {front}, window halfwidth {window}); enlarge the window")]
    WindowExhausted { t: f64, front: f64, window: f64 },

    #[error("susceptible mass leaking through the window edge at relative rate {rate:.3e} at t = {t}")]
    WindowLeak { t: f64, rate: f64 },

    #[error("state invariant violated at t = {t}: {what}")]
    Invariant { t: f64, what: String },

    #[error("k bracket invalid: {0}")]
    BracketInvalid(String),

    #[error("bracketing budget exhausted: every probe was undecided")]
    BracketExhausted,

    #[error("at {axis} = {value}: {source}")]
    AtValue {
        axis: String,
        value: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status: 2 for configuration problems, 1 for numeric or
    /// I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidKernel(_)
            | Error::InvalidGrid(_)
            | Error::UnderResolved { .. }
            | Error::InvalidArgument(_)
            | Error::InvalidModel(_)
            | Error::StepTooLarge { .. } => 2,
            Error::AtValue { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignRegime {
    AlwaysNegative,
    AlwaysPositive,
}

impl std::fmt::Display for SignRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SignRegime::AlwaysNegative => f.write_str("always negative"),
            SignRegime::AlwaysPositive => f.write_str("always positive"),
        }
    }
}
