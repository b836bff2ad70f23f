use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates the invariants of its type.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("malformed key material: {0}")]
    Key(String),

    #[error("hex decoding failed: {0}")]
    Hex(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("duplicate: {0}")]
    Duplicate(String),

    /// An issuance or delegation request was refused by policy.
    #[error("rejected: {0}")]
    Rejected(String),

    /// Caller is not allowed to perform the operation.
    #[error("unauthorized: {0}")]
    Unauthorized(String),

    /// A replica received a delta that does not start where it left off.
    #[error("sync gap: replica at {replica}, delta starts at {delta}")]
    SyncGap { replica: u64, delta: u64 },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
