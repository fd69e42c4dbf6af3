use thiserror::Error;

/// Errors surfaced by validation, factorizations and the fitting loops.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Symmetric factorization hit a nonpositive pivot; the matrix is not
    /// positive definite. `pivot` is the zero-based index of the failing
    /// diagonal entry.
    #[error("matrix is not positive definite (pivot {pivot})")]
    Singular { pivot: usize },

    /// A log or division left its numerical domain mid-update. Signals an
    /// ill-posed instance rather than a bug.
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("enumeration budget exceeded: p = {p} > {max}")]
    Budget { p: usize, max: usize },

    /// Adaptive quadrature could not reach the requested relative error.
    #[error("quadrature accuracy {achieved:e} did not reach target {target:e}")]
    Accuracy { achieved: f64, target: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
