//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A mathematical function was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid knot grid: {0}")]
    InvalidKnots(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    /// An interval-censored observation has zero or negative event
    /// probability under the current parameters.
    #[error("degenerate likelihood: observation {index} has non-positive interval probability")]
    LikelihoodDegenerate { index: usize },

    /// The incidence link is numerically saturated (cure probability 0 or 1).
    #[error("degenerate incidence: cure probability is numerically {value}")]
    DegenerateIncidence { value: f64 },

    /// A finite-difference stencil produced a non-finite objective value.
    #[error("non-finite objective at finite-difference stencil for coordinates ({i}, {j})")]
    NonFiniteStencil { i: usize, j: usize },

    #[error("objective is not finite at the initial point")]
    NonFiniteObjective,

    #[error("EM failure at iteration {iteration}: {source}")]
    EmIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("root finding failed: max residual {residual:.3e} after {iterations} iterations")]
    RootFind { residual: f64, iterations: usize },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for input problems, 3 for numeric
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) | Error::Io(_) | Error::Csv(_)
            | Error::Json(_) | Error::InvalidData(_) => 2,
            Error::EmIteration { source, .. } => source.exit_code().max(3),
            _ => 3,
        }
    }
}
