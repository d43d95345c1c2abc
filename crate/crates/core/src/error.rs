use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("operands live on different lattices")]
    LatticeMismatch,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("subcriticality is only classified in three dimensions (got d = {0})")]
    ClassificationUndefined(usize),
    #[error("not applicable: {0}")]
    Inapplicable(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("no ground state found: {0}")]
    NoGroundState(String),
    #[error("energy is unbounded below on the constraint sphere: {0}")]
    UnboundedBelow(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("soliton separation violated: {0}")]
    SeparationViolation(String),
    #[error("dimension guard tripped: {0}")]
    DimensionGuard(String),
    #[error("malformed snapshot: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
