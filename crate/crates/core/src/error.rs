//! Error type shared by all solver and simulation modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid grid construction parameters.
    #[error("grid error: {0}")]
    Grid(String),

    /// Arithmetic between distributions living on different grids.
    #[error("grid mismatch: distributions belong to different velocity grids")]
    GridMismatch,

    /// Out-of-range scalar parameter (eta, tau, angle, ...).
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A right-hand side violates the solvability condition of a singular operator.
    #[error("solvability violation: {0}")]
    Solvability(String),

    /// A solver precondition (zero average, symmetry, ...) does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Fixed-point iteration did not reach tolerance.
    #[error(
        "fixed-point solver did not converge after {iterations} iterations \
         (last relative update {last_update:.3e}, contraction estimate {contraction:.3})"
    )]
    NonConvergence {
        iterations: usize,
        last_update: f64,
        contraction: f64,
    },

    /// Time step outside the stability bound reported by the stepper builder.
    #[error("stability violation: {0}")]
    Stability(String),

    /// Geometry does not match the requested operation.
    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed on-disk data (CSV row, header, ...).
    #[error("format error: {0}")]
    Format(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
