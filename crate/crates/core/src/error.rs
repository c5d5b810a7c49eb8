use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("keyword contains no letters")]
    EmptyKeyword,
    #[error("invalid keyword {0:?}: only a-z allowed")]
    InvalidKeyword(String),
    #[error("edit bound {d} leaves nothing of word of length {len}")]
    DegenerateWord { d: usize, len: usize },
    #[error("fuzzy set would exceed budget of {0} members")]
    BudgetExceeded(usize),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("expected {expected} bits, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("record authentication failed")]
    AuthFailure,
    #[error("query edit bound {k} exceeds index edit bound {d}")]
    EditBoundExceeded { k: usize, d: usize },
    #[error("user {0:?} already enrolled")]
    DuplicateUser(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionUnsupported(u8),
    #[error("input truncated")]
    Truncated,
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error("server error {code}: {message}")]
    Remote { code: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
