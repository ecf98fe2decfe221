use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate record for farm `{farm_id}` in year {year}")]
    DuplicateKey { farm_id: String, year: i32 },

    #[error("price index has no value for year {0}")]
    MissingIndexYear(i32),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("expected income undefined: need {needed} years of history, have {have}")]
    ShortHistory { needed: usize, have: usize },

    #[error("degenerate stratum: {0}")]
    DegenerateStratum(String),

    #[error("design matrix is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<String>),

    #[error("IRLS did not converge after {iterations} iterations (deviance trace: {trace:?})")]
    NonConvergence { iterations: usize, trace: Vec<f64> },

    #[error("coordinate descent did not converge at lambda index {lambda_index}")]
    PathNonConvergence { lambda_index: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
