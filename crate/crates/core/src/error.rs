//! Error type shared by all simulator modules.

use thiserror::Error;

/// Errors produced by geometry validation, wave evaluation, sampling and
/// trajectory integration.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value violates the experiment's constraints.
    #[error("config error: {0}")]
    Config(String),

    /// The phase of a (near-)zero amplitude was requested.
    #[error("phase undefined: amplitude modulus {modulus:.3e} is below threshold")]
    PhaseUndefined { modulus: f64 },

    /// A trajectory entered a node of its guiding wave.
    #[error("wavefunction node at ({x:.6}, {y:.6}), t = {time:.6}")]
    Node { x: f64, y: f64, time: f64 },

    /// The integration step moves the particle too far per step.
    #[error("step displacement {displacement:.3e} exceeds limit {limit:.3e}; reduce dt")]
    Step { displacement: f64, limit: f64 },

    /// A state vector is not normalized.
    #[error("state not normalized: |psi|^2 = {norm_sq}")]
    Norm { norm_sq: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
