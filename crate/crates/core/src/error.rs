use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("PLY error at byte {offset}: {message}")]
    Ply { offset: u64, message: String },
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
    #[error("non-finite loss at step {step} (view {view}, max |grad| = {max_grad:e})")]
    NonFinite {
        step: u64,
        view: usize,
        max_grad: f64,
    },
    #[error("configuration mismatch: {}", .0.join("; "))]
    ConfigMismatch(Vec<String>),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("png: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
