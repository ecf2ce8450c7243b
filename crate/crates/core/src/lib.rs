//! Almost-exact state transfer through a uniformly coupled XY spin chain,
//! driven by a leakage-elimination pulse that pins the dynamics to a
//! perfect-transfer (or weak-coupling) trajectory.
//!
//! Everything runs in the single-excitation sector, so an `N`-spin chain is
//! an `N`-dimensional complex vector. Units are dimensionless with `J = 1`
//! and `ħ = 1`.
//!
//! Module map:
//! - [`lattice`]: coupling profiles, hopping matrices, exact propagation.
//! - [`control`]: pulse waveforms, their phase integrals and the
//!   decoupling conditions (including the Bessel-zero condition).
//! - [`frame`]: the moving basis, frame amplitudes, the effective
//!   Hamiltonian and the P-Q memory-kernel verifier.
//! - [`engine`]: Strang-split time stepping and fidelity trajectories.
//! - [`lab`]: scenario presets, sweeps, calibration and CSV persistence.

pub mod control;
pub mod engine;
mod error;
pub mod frame;
pub mod lab;
pub mod lattice;

pub use error::{Error, Result};

/// Complex amplitude type used throughout.
pub type C64 = num_complex::Complex64;
