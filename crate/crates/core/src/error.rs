use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// The kebab-case tags in the messages (`behind-camera`, `not-an-ellipsoid`, ...)
/// are stable and are what the CLI and the C ABI surface to callers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("behind-camera: point depth {depth} mm is not positive")]
    BehindCamera { depth: f64 },

    #[error("degenerate-triangulation: rays are (nearly) parallel, |sin| = {sin_angle:e}")]
    DegenerateTriangulation { sin_angle: f64 },

    #[error("not-an-ellipsoid: {0}")]
    NotAnEllipsoid(String),

    #[error("degenerate-projection: {0}")]
    DegenerateProjection(String),

    #[error("underconstrained: {0}")]
    Underconstrained(String),

    #[error("unsynchronizable: {0}")]
    Unsynchronizable(String),

    #[error("dimension-mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed{}: {source}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        frame: Option<u64>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_stage(self, stage: &'static str, frame: Option<u64>) -> Self {
        Error::Stage { stage, frame, source: Box::new(self) }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
