use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (max |M - M^dagger| = {0:e})")]
    NotHermitian(f64),

    #[error("operator is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),

    #[error("invalid trace {trace:e}: {reason}")]
    InvalidTrace { trace: f64, reason: &'static str },

    #[error("columns are not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("derivative has a kernel-to-kernel component of size {0:e}; no SLD reproduces it")]
    InconsistentDerivative(f64),

    #[error("Tr[d rho] = {0:e} for a unit-trace state; use local_fisher for subnormalized families")]
    TraceDerivativeNonZero(f64),

    #[error("accessible trace {0:e} is below the valid time domain (t >= t*)")]
    OutsideTimeDomain(f64),

    #[error("blank term is inconsistent: Tr[L rho] = {numerator:e} with blank weight {blank_weight:e}")]
    InconsistentBlankTerm { numerator: f64, blank_weight: f64 },

    #[error("estimator is insensitive to g (|d E/d g| = {0:e})")]
    InsensitiveEstimator(f64),

    #[error("trace grew to {0} under a supposedly dissipative evolution")]
    NonDissipative(f64),

    #[error("matrix norm {0:e} is too large for a reliable exponential")]
    ExponentOverflow(f64),

    #[error("state vector has zero norm")]
    ZeroNorm,

    #[error("channel is not completely positive (min Choi eigenvalue {0:e})")]
    NotCompletelyPositive(f64),

    #[error("descendant block {subsequence} has eigenvalue {min_eigenvalue:e}")]
    NegativeDescendant {
        subsequence: String,
        min_eigenvalue: f64,
    },

    #[error("no full-space model is available for this channel family; use descendants_via_channels")]
    NoFullSpaceModel,

    #[error("{what} = {value} exceeds the supported maximum {max}")]
    TooLarge {
        what: &'static str,
        value: usize,
        max: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
