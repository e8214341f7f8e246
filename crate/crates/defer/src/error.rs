//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by construction, estimation, and query operations.
#[derive(Debug, Error)]
pub enum DeferError {
    /// Domain bounds are malformed (non-finite, empty, or inverted).
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A query point lies outside the closed domain.
    #[error("point outside domain: coordinate {value} in dimension {dim} not in [{lo}, {hi}]")]
    OutOfDomain {
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A trisection would exceed the per-dimension depth cap.
    #[error("ternary depth limit exceeded (max depth {max} in dimension {dim})")]
    DepthLimit { dim: usize, max: u8 },

    /// The density function misbehaved (NaN, protocol violation, subprocess death).
    #[error("density evaluation failed: {0}")]
    Evaluation(String),

    /// An internal data-structure invariant was violated.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    /// Every leaf has zero mass; the requested quantity is undefined.
    #[error("approximation has zero total mass")]
    ZeroMass,

    /// The conditioning slice intersects only zero-density leaves.
    #[error("conditional slice has zero measure")]
    ZeroMeasureConditional,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized tree or record could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, DeferError>;
