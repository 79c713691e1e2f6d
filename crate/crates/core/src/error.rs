use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or layouts of two values that must agree do not.
    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid binning: {0}")]
    Binning(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot fit bins: {0}")]
    Fit(String),

    #[error("data error: {0}")]
    Data(String),

    /// A time difference came out negative where time must move forward.
    #[error("time-order violation: {0}")]
    TimeOrder(String),

    /// The event stream went backwards in time by more than the tolerance.
    #[error(
        "event {event_index} at t={timestamp} regresses past previous t={previous} \
         (tolerance {tolerance})"
    )]
    OrderedStream {
        event_index: u64,
        timestamp: f64,
        previous: f64,
        tolerance: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("{}:{line}: field `{field}`: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        field: String,
        message: String,
    },

    /// A semantic error in an input file, with its position.
    #[error("{}:{line}: field `{field}`: {source}", path.display())]
    Located {
        path: PathBuf,
        line: u64,
        field: String,
        #[source]
        source: Box<Error>,
    },

    #[error("snapshot {what} mismatch: snapshot has {found}, current run has {expected}")]
    SnapshotMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("unsupported snapshot format version {found} (expected {expected})")]
    SnapshotVersion { expected: u32, found: u32 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Write(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
