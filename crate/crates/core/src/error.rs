use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain where an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-supplied parameter is invalid.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A width could not be bracketed inside the sampled range.
    #[error("range error: {0}")]
    Range(String),

    /// The correlation peak sits on the edge of the sampled window.
    #[error("peak on window boundary at ({x}, {y})")]
    Boundary { x: usize, y: usize },

    /// The peak is narrower than one sample; the width is at most one superpixel.
    #[error("width below resolution (at most one superpixel)")]
    BelowResolution,

    #[error("no usable data: {0}")]
    EmptyData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
