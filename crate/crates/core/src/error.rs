use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("variable `{variable}`: level {level} out of range 0..={max}")]
    LevelOutOfRange {
        variable: String,
        level: i64,
        max: usize,
    },

    #[error("invalid dummy state in block of variable `{variable}`: {reason}")]
    InvalidState { variable: String, reason: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("enumeration of {count} states exceeds cap {cap}; rely on the dominance certificate or raise GRASSCAT_CAP")]
    EnumerationTooLarge { count: u128, cap: u128 },

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("conditioning on a zero-probability event: {0}")]
    ZeroProbability(String),

    #[error("degenerate conditioning: {0}")]
    Degenerate(String),

    #[error("positivity certificate failed: worst margin {margin:.3e} at row {row}")]
    Positivity { margin: f64, row: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no data")]
    NoData,

    #[error("row {row}: {source}")]
    Ingest {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// True for failures caused by the numbers rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::ZeroProbability(_)
                | Error::Degenerate(_)
                | Error::Positivity { .. }
                | Error::Numerical(_)
                | Error::EnumerationTooLarge { .. }
        )
    }
}
