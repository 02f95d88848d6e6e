use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("payload size mismatch: header implies {expected} bytes, found {found}")]
    PayloadSizeMismatch { expected: usize, found: usize },

    #[error("non-finite voxel value at index {0}")]
    NonFinite(usize),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate volume")]
    DegenerateVolume,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("backend failure at patch offset {offset:?}: {message}")]
    Backend { offset: [usize; 3], message: String },

    #[error("tiling: {0}")]
    Tiling(String),

    #[error("undefined Dice: both masks are empty")]
    UndefinedDice,

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("no nonzero pairs")]
    NoNonzeroPairs,

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("bootstrap: {0}")]
    Bootstrap(String),

    #[error("mask subset violation: {0}")]
    NotSubset(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("case data: {0}")]
    CaseData(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
