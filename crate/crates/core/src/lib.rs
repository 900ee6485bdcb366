//! Driven-dissipative dynamics of a qubit coupled to a readout resonator.
//!
//! The library builds qubit-resonator Hamiltonians, attaches one of three
//! dissipator constructions (Lindblad, static Bloch-Redfield, time-dependent
//! Bloch-Redfield in the instantaneous eigenbasis), propagates density
//! matrices, and extracts relaxation rates from the resulting traces.
//!
//! Conventions used throughout:
//! * hbar = 1; angular frequencies in rad/ns; times in ns.
//! * Config-facing frequencies are ordinary frequencies in GHz; convert with
//!   [`ghz`] at the boundary.
//! * Composite basis order is qubit (x) cavity, index `q * n_trunc + n`,
//!   with qubit index 0 = ground, 1 = excited.

pub mod analysis;
pub mod dissipators;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod hilbert;
pub mod model;

pub use error::{Error, Result};
pub use hilbert::{C64, CMat, EigSystem};

/// Convert an ordinary frequency in GHz to an angular frequency in rad/ns.
pub fn ghz(f: f64) -> f64 {
    std::f64::consts::TAU * f
}

/// Inverse of [`ghz`]: angular rad/ns back to ordinary GHz.
pub fn to_ghz(omega: f64) -> f64 {
    omega / std::f64::consts::TAU
}
