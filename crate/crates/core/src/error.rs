use thiserror::Error;

use crate::laplace::CriticalPoint;

/// Errors reported by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("resolution too coarse: gap {gap:.3e} < 4h = {four_h:.3e}")]
    ResolutionTooCoarse { gap: f64, four_h: f64 },

    #[error("point {0:?} lies outside the fluid region")]
    OutsideDomain([f64; 2]),

    #[error("source {0:?} is within 1e-6 of the boundary")]
    SourceOnBoundary([f64; 2]),

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error("harmonic function is constant")]
    ConstantFunction,

    #[error("critical-point index sum {found} differs from k - 2 = {expected}")]
    IndexSumMismatch { expected: f64, found: f64, points: Vec<CriticalPoint> },

    #[error(
        "quadrature patch at {point:?} would have radius {radius:.3e} < {min:.3e}; the wall is too close for the grid"
    )]
    QuadraturePatch { point: [f64; 2], radius: f64, min: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("vacuum: density would vanish at radius {radius:.6}")]
    Vacuum { radius: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("wrong number of point constraints: expected {expected}, got {got}")]
    ConstraintCount { expected: usize, got: usize },

    #[error("no bracket for root: {0}")]
    NoBracket(String),

    #[error("blow-up at t = {t:.6}: sup rho = {sup_rho:.3e}")]
    BlowUp { t: f64, sup_rho: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Module-qualified identifier, stable across releases.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidDomain(_) => "geometry.invalid-domain",
            Error::ResolutionTooCoarse { .. } => "geometry.resolution-too-coarse",
            Error::OutsideDomain(_) => "geometry.outside-domain",
            Error::SourceOnBoundary(_) => "greens.source-on-boundary",
            Error::IllConditioned(_) => "laplace.ill-conditioned",
            Error::ConstantFunction => "laplace.constant-function",
            Error::IndexSumMismatch { .. } => "laplace.index-sum-mismatch",
            Error::QuadraturePatch { .. } => "commutator.quadrature-patch",
            Error::Unsupported(_) => "core.unsupported",
            Error::Vacuum { .. } => "stationary.vacuum",
            Error::InvalidParameter(_) => "core.invalid-parameter",
            Error::ConstraintCount { .. } => "divcurl.constraint-count",
            Error::NoBracket(_) => "stationary.no-bracket",
            Error::BlowUp { .. } => "simulator.blow-up",
            Error::Config(_) => "cli.config",
            Error::Io(_) => "cli.io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
