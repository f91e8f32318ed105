//! Digital twin of a superconducting bosonic quantum memory: a cavity mode
//! dispersively coupled to a transmon ancilla.
//!
//! The crate simulates the memory's standard characterization protocols
//! end-to-end (Fock and coherent-state T1 decay, Ramsey-style T2, thermal
//! occupation), models transmon-based readout and Wigner tomography, fits the
//! resulting traces with nonlinear least squares, and computes
//! participation-ratio quality-factor budgets for the resonator hardware.
//!
//! Modules mirror the layering of the problem:
//!
//! - [`hilbert`] — truncated Fock-space states and operators,
//! - [`dynamics`] — Lindblad evolution and ideal gates,
//! - [`measurement`] — readout, shot sampling, Wigner functions,
//! - [`fitting`] — decay-model least squares and the SNAP calibration search,
//! - [`lossbudget`] — participation and seam loss budgets.

pub mod dynamics;
pub mod fitting;
pub mod hilbert;
pub mod integrator;
pub mod linalg;
pub mod lossbudget;
pub mod measurement;
pub mod rng;
pub mod tol;

pub use tol::Tolerances;
