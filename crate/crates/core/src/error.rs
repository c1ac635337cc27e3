use thiserror::Error;

/// Errors produced by the codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tokenizer definition: {0}")]
    TokenizerDefinition(String),

    #[error("corrupt archive: {0}")]
    CorruptArchive(String),

    #[error("archive is truncated: {0}")]
    ShortRead(&'static str),

    #[error("not an ssmzip archive (bad magic)")]
    BadMagic,

    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u8),

    #[error("archive was written with tokenizer {archive:016x}, but {loaded:016x} is loaded")]
    IncompatibleTokenizer { archive: u64, loaded: u64 },

    #[error("vocabulary of {0} symbols exceeds the coder resolution")]
    UnsupportedVocabulary(usize),

    #[error("checksum mismatch after decoding")]
    ChecksumMismatch,

    #[error("numeric fault in {0}: non-finite value")]
    NumericFault(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("api misuse: {0}")]
    ApiMisuse(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptArchive(msg.into())
}
