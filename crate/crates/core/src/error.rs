use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("camera at elevation {0}° is too close to the pole for a gravity-aligned look-at")]
    PoleDegenerate(f64),

    #[error("matrix is not a rotation (orthonormality residual {0:e})")]
    NonRotationInput(f64),

    #[error("count must be at least 1")]
    InvalidCount,

    #[error("invalid viewpoint: {0}")]
    InvalidViewpoint(String),

    #[error("invalid noise schedule parameters: {0}")]
    InvalidScheduleParams(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("invalid conditioning: {0}")]
    InvalidConditioning(String),

    #[error("server unreachable: {0}")]
    Unreachable(String),

    #[error("protocol mismatch: {0}")]
    ProtocolMismatch(String),

    #[error("server error (HTTP {status}): {message}")]
    ServerError { status: u16, message: String },

    #[error("{} of {} batch items failed", .items.iter().filter(|s| s.is_some()).count(), .items.len())]
    PartialFailure {
        /// One entry per request; `None` marks success.
        items: Vec<Option<String>>,
    },

    #[error("image codec: {0}")]
    Codec(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Transport and backend failures, as opposed to invalid input or I/O.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::BackendUnavailable(_)
                | Error::Unreachable(_)
                | Error::ProtocolMismatch(_)
                | Error::ServerError { .. }
                | Error::PartialFailure { .. }
        )
    }
}
