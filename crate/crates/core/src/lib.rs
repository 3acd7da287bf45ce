//! Continuous weak linear measurement of a finite-dimensional quantum system by
//! several detectors.
//!
//! Three engines compute the distribution of time-integrated detector outputs
//! and check each other:
//!
//! - [`fcs`]: counting-field evolution of the pseudo-density matrix, then an
//!   inverse Fourier transform;
//! - [`diffusion`]: drift-diffusion of `ρ(s)` over output space, plus closed forms
//!   for commuting measured operators;
//! - [`stochastic`]: trajectories driven by auxiliary qubits or oscillators.
//!
//! [`model`] validates phenomenological noise and susceptibility data and
//! [`separation`] brings a setup to equal, uncorrelated detector noise.

pub mod cli;
pub mod diffusion;
pub mod error;
pub mod fcs;
pub mod model;
pub mod numerics;
pub mod separation;
pub mod stochastic;
#[doc(hidden)]
pub mod test_support;

pub use error::{Error, Result};
pub use model::{MeasurementSetup, NoiseData, ValidationReport};
pub use numerics::{ComplexMatrix, RealMatrix, RngStream};
