use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite values encountered: {0}")]
    NonFinite(String),

    #[error("initialization `{init}` unavailable: requires r^2 = {needed} <= min(m, n) = {min_dim}")]
    InitUnavailable {
        init: &'static str,
        needed: usize,
        min_dim: usize,
    },

    #[error("matrix {rows}x{cols} exceeds the densification limit; use projbcd or manbcd for large sparse inputs")]
    TooLargeToDensify { rows: usize, cols: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }
}
