use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation received tensors whose shapes cannot be combined.
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Finite inputs produced NaN or infinity; usually a parameter blow-up.
    #[error("{op}: non-finite values produced from finite inputs")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` has no gradient; run backward before stepping")]
    MissingGrad(String),

    /// A monotonic non-skipping surjective path needs at least one frame
    /// per token.
    #[error("no monotonic surjective path: t_y={t_y} < t_x={t_x}")]
    NoValidPath { t_x: usize, t_y: usize },

    /// Contract violation described in the message.
    #[error("{0}")]
    Invalid(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
