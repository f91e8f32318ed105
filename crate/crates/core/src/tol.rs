//! Centralized numerical tolerance configuration.
//!
//! Every validity check in the crate pulls its threshold from one
//! [`Tolerances`] record so tests and callers agree on what "equal" means.

/// Numerical tolerances used by state validation, gate checks, and the
/// integrator. Defaults match the contracts asserted throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Max permitted deviation from Hermitian symmetry, `max |ρ − ρ†|`.
    pub hermiticity: f64,
    /// Max permitted deviation of `Tr ρ` from 1.
    pub trace: f64,
    /// Most negative admissible density-matrix eigenvalue.
    pub eigenvalue_floor: f64,
    /// Max permitted deviation of `U†U` from identity for gate unitaries.
    pub unitarity: f64,
    /// Relative tolerance of the adaptive integrator.
    pub rk_rtol: f64,
    /// Absolute tolerance of the adaptive integrator.
    pub rk_atol: f64,
    /// Max admissible trace drift across one `evolve` call.
    pub trace_drift: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermiticity: 1e-12,
            trace: 1e-10,
            eigenvalue_floor: -1e-9,
            unitarity: 1e-10,
            rk_rtol: 1e-9,
            rk_atol: 1e-12,
            trace_drift: 1e-8,
        }
    }
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        hermiticity: 1e-12,
        trace: 1e-10,
        eigenvalue_floor: -1e-9,
        unitarity: 1e-10,
        rk_rtol: 1e-9,
        rk_atol: 1e-12,
        trace_drift: 1e-8,
    };
}
