use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value after step at t = {t}")]
    NumericalOverflow { t: f64 },

    #[error("coarse-level variance is zero; optimal alpha is undefined")]
    DegenerateCoarse,

    #[error("difference sample count {requested} exceeds cap {cap} (var_r = {var_r:.3e}, corr = {corr:.6}, eps = {eps:.3e})")]
    BudgetExceeded {
        requested: usize,
        cap: usize,
        var_r: f64,
        corr: f64,
        eps: f64,
    },

    #[error("sample {index} failed: {source}")]
    Sample {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
