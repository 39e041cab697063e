use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {location}: {message}")]
    Malformed {
        path: PathBuf,
        /// `line N` for text formats, `byte N` for binary ones.
        location: String,
        message: String,
    },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("intensity {0} outside [0, 65536]")]
    IntensityOutOfRange(f64),
    #[error("unknown species label `{0}`")]
    UnknownSpecies(String),
    #[error("duplicate segment: tree `{id}` in scan `{scan_id}`")]
    DuplicateSegment { id: String, scan_id: String },
    #[error("{0}: expected `<scan_id>__<tree_id>.<ext>` below a species directory")]
    BadLayout(PathBuf),
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("point cloud lacks {0}")]
    MissingAttribute(&'static str),
    #[error("need at least 3 anchor pairs, got {0}")]
    TooFewAnchors(usize),
    #[error("anchor configuration is collinear or coincident")]
    DegenerateAnchors,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("label `{0}` is not in the species set")]
    LabelOutsideSet(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Malformed {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
