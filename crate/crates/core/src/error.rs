use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} block {index} is not symmetric positive definite")]
    NotPositiveDefinite { what: &'static str, index: usize },

    #[error("matrix contains non-finite entries: {0}")]
    NonFinite(&'static str),

    #[error("domain error in {function}: {detail}")]
    Domain {
        function: &'static str,
        detail: String,
    },

    #[error("moment matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, trace {trace:e})")]
    NotPsd { min_eigenvalue: f64, trace: f64 },

    #[error("constraint variant {variant} requires an orthonormal basis, got {basis}")]
    VariantBasisMismatch { variant: String, basis: String },

    #[error("state matrix is not Schur stable (spectral radius {spectral_radius}); mean-square certificate requires all eigenvalues strictly inside the unit circle")]
    NotSchurStable { spectral_radius: f64 },

    #[error("Riccati recursion lost positive definiteness at stage {stage}")]
    RiccatiBreakdown { stage: usize },

    #[error("certificate invalid: {0}")]
    InvalidCertificate(String),

    #[error("paired batches were simulated with different seeds")]
    SeedMismatch,

    #[error("empty batch")]
    EmptyBatch,
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
