use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("state dimension {0} is below the minimum of 2")]
    DimensionTooSmall(usize),

    #[error("state is not normalized (norm {norm}); deviation above 1e-6 is rejected")]
    NotNormalized { norm: f64 },

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("basis is not orthonormal: max |<j|k> - delta_jk| = {deviation:e}")]
    NotOrthonormal { deviation: f64 },

    #[error("eigenvalues must be strictly increasing (violated at index {index})")]
    EigenvaluesNotIncreasing { index: usize },

    #[error("matrix is not Hermitian: max |H_ij - conj(H_ji)| = {asymmetry:e}")]
    NotHermitian { asymmetry: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_diagonal:e}, worst residual {residual:e})")]
    NoConvergence {
        sweeps: usize,
        off_diagonal: f64,
        residual: f64,
    },

    #[error(
        "phase undefined: triple-product magnitude {magnitude:e} is below the validity threshold"
    )]
    UndefinedPhase { magnitude: f64 },

    #[error(
        "action profile too sparse: longest contiguous valid run has {longest} points (need 3)"
    )]
    ProfileTooSparse { longest: usize },

    #[error("{x} lies outside the supported range of the profile gradient")]
    OutsideSupport { x: f64 },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("kernel is not complete: max |sum_r P(r|x_m) - 1| = {deviation:e}")]
    IncompleteKernel { deviation: f64 },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("overlap peak at the scan boundary (t = {t}); widen the scan")]
    PeakAtScanBoundary { t: f64 },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
