use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("input too short: {frames} frames, need at least {min_frames} ({detail})")]
    InputTooShort {
        frames: usize,
        min_frames: usize,
        detail: String,
    },

    #[error("invalid attention parameters: {0}")]
    Attention(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("missing weight tensor {0:?}")]
    MissingWeight(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Short machine-readable code, used by the CLI's `code: message` error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape_error",
            Error::Config(_) => "config_error",
            Error::InputTooShort { .. } => "input_too_short",
            Error::Attention(_) => "attention_error",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Format { .. } => "format_error",
            Error::MissingWeight(_) => "missing_weight",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
