use std::path::PathBuf;

/// Every failure the toolkit can report.
///
/// The CLI prints these as `error: <kind>: <detail>`, where `<kind>` comes
/// from [`Error::kind`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{extra} unexpected trailing bytes after payload")]
    TrailingData { extra: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{what} out of range: {value} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("unsatisfiable or budget exhausted: {0}")]
    Unsatisfiable(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::TrailingData { .. } => "trailing_data",
            Error::NonFinite { .. } => "non_finite",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::MalformedHeader(_) => "malformed_header",
            Error::InvalidShape(_) => "invalid_shape",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::OutOfRange { .. } => "out_of_range",
            Error::InvalidPermutation(_) => "invalid_permutation",
            Error::Unsatisfiable(_) => "unsatisfiable_or_budget",
            Error::Divergence { .. } => "divergence",
            Error::CheckFailed(_) => "check_failed",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Stage { source, .. } => source.kind(),
        }
    }
}

/// Attaches a pipeline stage name to an error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
