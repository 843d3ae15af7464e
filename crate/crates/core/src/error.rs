use thiserror::Error;

/// Failure modes shared by every stage of the forecasting engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate covariate `{0}`: no variation in training data")]
    DegenerateCovariate(String),

    #[error("rank-deficient design at effect `{0}`")]
    RankDeficient(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("lookahead at {at}: {component} update consumed the observation at {consumed}, newest allowed is {allowed}")]
    Lookahead {
        at: String,
        component: String,
        consumed: String,
        allowed: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure category, used to map errors onto stable exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Numerical(_) | Error::RankDeficient(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
