//! Desk-scale simulator of a delayed-choice eraser interferometer.
//!
//! The same detection statistics are computed three independent ways and
//! cross-checked against each other:
//!
//! * [`wave`] evaluates the entangled-pair amplitudes analytically and
//!   produces conditional and marginal densities on the screen;
//! * [`stats`] draws coincidence events by seeded Monte Carlo and builds
//!   per-detector histograms;
//! * [`pilot`] integrates pilot-wave trajectories of the signal particle,
//!   including the mid-flight change of guidance when the idler passes
//!   the eraser;
//! * [`bell`] reduces the experiment to a two-qubit Bell pair and checks
//!   the same correlation structure there;
//! * [`verify`] bundles the cross-model consistency checks used by the
//!   `check` command and the acceptance suite.

pub mod bell;
pub mod error;
pub mod geometry;
pub mod pilot;
pub mod stats;
pub mod verify;
pub mod wave;

pub use error::{Error, Result};
pub use geometry::{DetectorId, ExperimentGeometry, Slit};
pub use wave::{Amplitude, WaveModel};
