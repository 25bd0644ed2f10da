use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("set size mismatch: {0} vs {1} (equalize the sets first)")]
    SizeMismatch(usize, usize),

    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    ImageSizeMismatch(usize, usize, usize, usize),

    #[error("empty set")]
    EmptySet,

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("patch exceeds image: patch {patch} vs image {height}x{width}")]
    PatchExceedsImage {
        patch: usize,
        height: usize,
        width: usize,
    },

    #[error("sample larger than population: {requested} > {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("degenerate sample")]
    DegenerateSample,

    #[error("density grid mismatch")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("adversarial term unsupported")]
    AdversarialUnsupported,

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}
