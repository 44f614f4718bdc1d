use thiserror::Error;

/// Errors produced by the numeric engine and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-ratio gamma must lie in (0, 1], got {0}")]
    InvalidGamma(f32),

    #[error("SVD did not converge for layer `{layer}` after {sweeps} sweeps")]
    SvdNonConvergence { layer: String, sweeps: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Distinct failure modes when decoding a weight container.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContainerError {
    #[error("not a weight container (bad magic bytes)")]
    BadMagic,
    #[error("unsupported weight container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated weight container: {0}")]
    Truncated(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("manifest does not match model layout: {0}")]
    LayoutMismatch(String),
    #[error("checksum mismatch for tensor `{0}`")]
    Checksum(String),
}

impl ContainerError {
    /// Stable numeric code for each failure mode.
    pub fn code(&self) -> u32 {
        match self {
            ContainerError::BadMagic => 1,
            ContainerError::UnsupportedVersion(_) => 2,
            ContainerError::Truncated(_) => 3,
            ContainerError::Manifest(_) => 4,
            ContainerError::LayoutMismatch(_) => 5,
            ContainerError::Checksum(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
