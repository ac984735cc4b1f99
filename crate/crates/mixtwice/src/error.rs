use thiserror::Error;

/// Errors produced by grid construction, density evaluation, fitting and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// Input values violate a precondition (nonpositive variance, empty data, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The effect grid would have zero width.
    #[error("degenerate effect range: {0}")]
    DegenerateRange(String),

    /// Vector or tensor shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A per-unit computation lost all probability mass.
    #[error("numerical degeneracy at unit {unit}: {detail}")]
    NumericalDegeneracy { unit: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
