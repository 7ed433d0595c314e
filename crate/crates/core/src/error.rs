use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors shared across the geometry, metric, loss and vMF layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A vector with (near-)zero norm cannot be normalized.
    #[error("cannot normalize a vector with norm below 1e-12")]
    ZeroVector,
    /// Two operands do not share the same embedding dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// Antipodal unit vectors have no unique geodesic.
    #[error("antipodal inputs: geodesic undefined{}", fmt_row(.row))]
    AntipodalInputs { row: Option<usize> },
    /// The operation needs more rows than the batch provides.
    #[error("batch too small: need at least {min} rows, got {got}")]
    BatchTooSmall { min: usize, got: usize },
    /// recall@k with k exceeding the number of candidates.
    #[error("k = {k} exceeds the number of candidates {m}")]
    KTooLarge { k: usize, m: usize },
    /// A scalar parameter is outside its admissible range.
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },
    /// The sum of two antipodal mean directions has no direction.
    #[error("antipodal mean directions: sum direction undefined")]
    UndefinedDirection,
    /// Two batches that must be paired row-by-row differ in shape.
    #[error("shape mismatch: {m_a}x{d_a} vs {m_b}x{d_b}")]
    ShapeMismatch {
        m_a: usize,
        d_a: usize,
        m_b: usize,
        d_b: usize,
    },
}

fn fmt_row(row: &Option<usize>) -> alloc::string::String {
    match row {
        Some(i) => alloc::format!(" at row {i}"),
        None => alloc::string::String::new(),
    }
}

impl Error {
    /// Attach a batch row index to a per-row geometry error.
    pub fn at_row(self, row: usize) -> Self {
        match self {
            Error::AntipodalInputs { .. } => Error::AntipodalInputs { row: Some(row) },
            other => other,
        }
    }
}
