use std::io;

use thiserror::Error;

use crate::opes::EncryptedId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid plaintext domain size {0}")]
    InvalidDomain(u64),
    #[error("plaintext {plaintext} outside domain [0, {domain_size})")]
    OutOfDomain { plaintext: u64, domain_size: u64 },
    #[error("ciphertext {0} is not in the image of the key")]
    UnknownCiphertext(EncryptedId),
    #[error("identifier {0} already present")]
    DuplicateId(u64),
    #[error("no live entry for identifier {0}")]
    NotFound(u64),
    #[error("empty range")]
    EmptyRange,
    #[error("invalid bucket policy: {0}")]
    InvalidPolicy(String),
    #[error("insufficient data: selectivity {available} below required {required}")]
    InsufficientData { available: usize, required: usize },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("service replied with error code `{0}`")]
    Remote(String),
    #[error("node `{0}` has no parents")]
    NoParents(String),
    #[error("composition plan: {0}")]
    Plan(String),
    #[error("missing user input for root node `{0}`")]
    MissingBinding(String),
    #[error("edge {edge}: {source}")]
    Edge {
        edge: String,
        #[source]
        source: Box<Error>,
    },
    #[error("stale snapshot for service `{service}`: transcript saw version {expected}, snapshot is {actual}")]
    StaleSnapshot {
        service: String,
        expected: u64,
        actual: u64,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn on_edge(self, edge: impl Into<String>) -> Error {
        match self {
            e @ Error::Edge { .. } => e,
            other => Error::Edge {
                edge: edge.into(),
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
