use thiserror::Error;

/// Errors surfaced at module boundaries.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Vector or feature lengths do not line up.
    #[error("dimension mismatch: expected length {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    /// A NaN or infinity crossed a module boundary.
    #[error("non-finite value: {0}")]
    Numeric(String),

    /// A caller violated an operation precondition.
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// Invalid configuration rejected before any work starts.
    #[error("invalid config: {0}")]
    Config(String),

    /// An internal invariant failed.
    #[error("internal error: {0}")]
    Internal(String),

    /// A client-side failure, tagged with the offending client.
    #[error("client {client_id}: {source}")]
    Client {
        client_id: usize,
        #[source]
        source: Box<CoreError>,
    },
}

impl CoreError {
    pub(crate) fn for_client(self, client_id: usize) -> CoreError {
        CoreError::Client {
            client_id,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
