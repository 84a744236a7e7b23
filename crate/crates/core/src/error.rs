use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("slot {slot} out of range for {slots} tensor factors")]
    SlotOutOfRange { slot: usize, slots: usize },

    #[error("matrix is not hermitian (max |M - M^dag| = {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not a density matrix: {reason}")]
    NotDensity { reason: String },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("Weyl operator dominated by truncation (top-level population {population:.3e})")]
    TruncationDominated { population: f64 },

    #[error("Fock truncation certificate failed: top-level population {population:.3e} at t = {time}")]
    TruncationCertificate { population: f64, time: f64 },

    #[error("total Hilbert space dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("order r = {r} exceeds configured cap {cap}")]
    OrderCap { r: usize, cap: usize },

    #[error("vanishing odd moment condition violated by particle {particle}: |moment| = {moment:.3e}")]
    OddMoment { particle: usize, moment: f64 },

    #[error("quadrature tolerance not met: error estimate {error:.3e} > target {target:.3e}")]
    Quadrature { error: f64, target: f64 },

    #[error("model is not symmetric")]
    NotSymmetric,

    #[error("model is not energy conserving: ||[G, h]|| = {deviation:.3e}")]
    NotEnergyConserving { deviation: f64 },

    #[error("inconsistent index-class constraints: {0}")]
    InconsistentClass(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
