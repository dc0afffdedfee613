use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic tag {found:?}, expected \"MIPT\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported trace version {0} (this reader understands version 1)")]
    UnsupportedVersion(u32),

    #[error("invalid trace header: {0}")]
    InvalidHeader(String),

    #[error("truncated trace payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("non-finite value at snapshot {snapshot}, row {row}, column {column}")]
    NonFinite {
        snapshot: usize,
        row: usize,
        column: usize,
    },

    #[error("metadata sidecar: {0}")]
    Sidecar(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("block {block}: {source}")]
    Block {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("span [{start}, {end}]: {source}")]
    Span {
        start: usize,
        end: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "exhaustive search over {subsets} subsets exceeds the limit of {limit}; use a smaller block count or prune count"
    )]
    Capability { subsets: u128, limit: u128 },

    #[error("toy model generation failed: {0}")]
    Generation(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// The underlying error with block and span context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Block { source, .. } | Error::Span { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn at_block(self, block: usize) -> Self {
        Error::Block {
            block,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_span(self, start: usize, end: usize) -> Self {
        match self {
            // already annotated by the span cache
            e @ Error::Span { .. } => e,
            e => Error::Span {
                start,
                end,
                source: Box::new(e),
            },
        }
    }
}
