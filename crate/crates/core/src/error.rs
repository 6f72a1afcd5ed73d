use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tables whose shapes disagree with the declared cardinalities.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A value outside its declared range, tagged with the offending row.
    #[error("data error at row {row}: {msg}")]
    Data { row: usize, msg: String },

    /// A metric whose required stratum is empty.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    /// Text input that failed to parse; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
