use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unknown scenario `{0}`")]
    ScenarioNotFound(String),

    #[error(
        "logistic fit did not converge after {iterations} iterations (score norm {score_norm:e})"
    )]
    NonConvergence {
        iterations: usize,
        score_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("complete separation in logistic fit: coefficient {index} reached {value:.3}")]
    Separation { index: usize, value: f64 },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("outcome has no variation ({0})")]
    DegenerateOutcome(String),

    #[error("positivity violation: {0}")]
    Positivity(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("data error at row {row}, column `{column}`: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("{failed} of {total} bootstrap replicates failed")]
    BootstrapFailures { failed: usize, total: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl Error {
    /// True for failures of the numerical machinery (fit or weights) as
    /// opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Separation { .. }
                | Error::RankDeficient
                | Error::DegenerateOutcome(_)
                | Error::Positivity(_)
                | Error::BootstrapFailures { .. }
        )
    }
}
