pub type Result<T, E = ReaderError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ReaderError {
    #[error("study configuration: {0}")]
    Config(String),

    #[error("unknown case {0}")]
    UnknownCase(String),

    #[error("slice {z} is outside 0..{slices}")]
    SliceOutOfRange { z: usize, slices: usize },

    /// A submission broke the named rule.
    #[error("{0}")]
    Rule(&'static str),

    #[error("case data: {0}")]
    Data(String),

    #[error("score store: {0}")]
    Store(String),

    #[error(transparent)]
    Core(#[from] bpe_core::Error),
}
