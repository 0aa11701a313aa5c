use std::io;

/// Errors produced by the kernels, the pipeline and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or extents are incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller-side precondition was violated (bad index, non-scalar loss, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A file could not be decoded; `offset` is the byte where decoding stopped.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// Container header, version or record layout is invalid.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(format!($($arg)*))
    };
}

macro_rules! contract_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(format!($($arg)*))
    };
}

pub(crate) use contract_err;
pub(crate) use dim_err;
