use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("targets infeasible: {0}")]
    Infeasible(String),

    #[error("no interior optimum: {0}")]
    NoInteriorOptimum(String),

    #[error("firm {firm}, period {period}: {source}")]
    AtObservation {
        firm: usize,
        period: i64,
        #[source]
        source: Box<Error>,
    },

    #[error("zero-variance variable `{0}` cannot be standardized")]
    ZeroVariance(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at(self, firm: usize, period: i64) -> Self {
        Error::AtObservation {
            firm,
            period,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidParameter(_) | Error::Infeasible(_)
        )
    }
}
