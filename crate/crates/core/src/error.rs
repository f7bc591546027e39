use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("coordinate descent did not converge after {sweeps} sweeps (duality gap {gap:.3e})")]
    NoConvergence { sweeps: usize, gap: f64 },
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("empty fold {fold} in cross-validation plan")]
    EmptyFold { fold: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
