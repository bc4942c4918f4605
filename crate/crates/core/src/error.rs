use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("ball (center {center:?}, radius {radius}) leaves the grid")]
    OutOfDomain { center: Vec<f64>, radius: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate frequency: H = {h:e} at radius {radius}")]
    DegenerateFrequency { h: f64, radius: f64 },

    #[error("degenerate blowup: {0}")]
    DegenerateBlowup(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("numeric failure at iteration {iteration}: {message}")]
    NumericFailure { iteration: usize, message: String },

    #[error("field file: {0}")]
    Format(String),

    #[error("size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("validation: {0}")]
    Validation(String),

    #[error("configuration: {0}")]
    Configuration(String),

    #[error("axiom violation: {0}")]
    AxiomViolation(String),

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI in its JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::UnsupportedDimension(_) => "unsupported-dimension",
            Error::OutOfDomain { .. } => "out-of-domain",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DegenerateFrequency { .. } => "degenerate-frequency",
            Error::DegenerateBlowup(_) => "degenerate-blowup",
            Error::Precondition(_) => "precondition",
            Error::DomainTooSmall(_) => "domain-too-small",
            Error::NumericFailure { .. } => "numeric-failure",
            Error::Format(_) => "format",
            Error::SizeMismatch { .. } => "size-mismatch",
            Error::Validation(_) => "validation",
            Error::Configuration(_) => "configuration",
            Error::AxiomViolation(_) => "axiom-violation",
            Error::Resolution(_) => "resolution",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Whether the error stems from bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch(_)
                | Error::UnsupportedDimension(_)
                | Error::InvalidArgument(_)
                | Error::Validation(_)
                | Error::Configuration(_)
                | Error::Resolution(_)
                | Error::OutOfDomain { .. }
        )
    }
}
