//! Simulator for an optically controlled quantum-dot spin qubit.
//!
//! A single hole (or electron) spin in a charged dot is modeled as a four-level
//! double-Λ system: two Zeeman-split ground states and two trion states.
//! Picosecond detuned pulses rotate the spin about the optical axis, Larmor
//! precession rotates it about the field axis, and a narrowband pump initializes
//! and reads it out. On top of the master-equation dynamics sit quasi-static and
//! Markovian dephasing, spectral diffusion, a phenomenological nuclear-feedback
//! model, complete experiment drivers and least-squares fitting.
//!
//! Module map:
//!
//! - [`levels`]: level structure, Hamiltonian, selection rules, Zeeman and Larmor frequencies
//! - [`pulses`]: optical events and sequence builders
//! - [`dynamics`]: density matrices, Lindblad integration, pulse reduction, pumping
//! - [`noise`]: dephasing, spectral diffusion and Overhauser feedback
//! - [`experiments`]: sweeps, shot-noise readout, scan direction, hysteresis
//! - [`fitting`]: Levenberg–Marquardt fits and envelope model selection
//! - [`config`], [`output`], [`reproduce`]: run configuration and artifacts

pub mod config;
pub mod dynamics;
pub mod experiments;
pub mod fitting;
pub mod levels;
pub mod noise;
pub mod output;
pub mod pulses;
pub mod reproduce;

mod error;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

pub(crate) const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
