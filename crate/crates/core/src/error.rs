use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid reward matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid reward model: {0}")]
    InvalidModel(String),

    #[error("inequality measure is undefined for a single agent")]
    UndefinedInequality,

    #[error("utilitarian score is undefined for an all-zero reward matrix")]
    UndefinedUtility,

    #[error("agent {agent} has no strictly positive mean; log-welfare is unbounded")]
    UnboundedLog { agent: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("{n_agents} agents exceed the coalition enumeration bound of {max}")]
    TooManyAgents { n_agents: usize, max: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("requested {requested} voters but only {available} are available")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("standard deviation {std} is infeasible for entries {entries:?}")]
    InfeasibleStd {
        std: f64,
        entries: Vec<(usize, usize)>,
    },
}

impl Error {
    /// True for errors caused by the caller's data rather than by a solver.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NumericalInstability(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
