use std::path::PathBuf;

use thiserror::Error;

use crate::market::Direction;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}:{line}: unknown action `{token}`")]
    UnknownAction {
        path: PathBuf,
        line: u64,
        token: String,
    },

    #[error("{path}:{line}: sender `{sender}` and receiver `{receiver}` are on the same side")]
    SameSide {
        path: PathBuf,
        line: u64,
        sender: String,
        receiver: String,
    },

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("invalid market: {0}")]
    InvalidMarket(String),

    #[error("no positive feedback for direction {0}; use uniform scores instead")]
    NoPositives(Direction),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("undefined cross-ratio for scores ({a}, {b})")]
    UndefinedCrossRatio { a: f64, b: f64 },

    #[error("at pair ({x}, {y}): {source}")]
    AtPair {
        x: usize,
        y: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("input must contain a strictly positive value")]
    ZeroMass,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("NaN encountered in {0}")]
    NotFinite(&'static str),

    #[error("singles probability must be positive, got {value} for {side} user {index}")]
    NonPositiveSingles {
        side: crate::market::Side,
        index: usize,
        value: f64,
    },

    #[error("oracle did not converge after {iterations} iterations (demand gap {gap:e})")]
    OracleDiverged { iterations: usize, gap: f64 },

    #[error("oracle size cap exceeded: {n_x}x{n_y} > {cap}")]
    OracleTooLarge { n_x: usize, n_y: usize, cap: usize },

    #[error("bad container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_pair(x: usize, y: usize, source: Error) -> Self {
        Error::AtPair {
            x,
            y,
            source: Box::new(source),
        }
    }
}
