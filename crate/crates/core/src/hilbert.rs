//! Truncated Fock-space states and operators for the cavity⊗transmon system.
//!
//! The product space is ordered cavity-first: basis index `i = n·n_qubit + q`
//! for cavity photon number `n` and transmon level `q` (0 = ground,
//! 1 = excited). All constructors return density matrices that satisfy the
//! [`QuantumState`] physicality checks.

use ndarray::linalg::kron;
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{self, CMatrix, CVector, C_ONE, C_ZERO};
use crate::tol::Tolerances;

#[derive(Debug, Error)]
pub enum HilbertError {
    #[error("photon number {n} outside truncation 0..{n_cav}")]
    PhotonOutOfRange { n: usize, n_cav: usize },
    #[error(
        "coherent amplitude |α|²={alpha_sq:.4} exceeds truncation guard; \
         requires n_cav ≥ {required} (have {n_cav})"
    )]
    TruncationTooSmall {
        alpha_sq: f64,
        required: usize,
        n_cav: usize,
    },
    #[error("operator dimension {got} does not match factor dimension {expected}")]
    FactorDimensionMismatch { got: usize, expected: usize },
    #[error("operand dimension {got} does not match product dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("invalid Hilbert dimensions: {0}")]
    InvalidDims(String),
    #[error("density matrix is unphysical: {0}")]
    Unphysical(String),
}

/// Truncation of the cavity⊗transmon product space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilbertDims {
    n_cav: usize,
    n_qubit: usize,
}

impl HilbertDims {
    /// Default photon truncation used by the measurement protocols.
    pub const DEFAULT_N_CAV: usize = 20;

    pub fn new(n_cav: usize, n_qubit: usize) -> Result<Self, HilbertError> {
        if n_cav < 2 {
            return Err(HilbertError::InvalidDims(format!(
                "n_cav must be ≥ 2, got {n_cav}"
            )));
        }
        if !(n_qubit == 2 || n_qubit == 3) {
            return Err(HilbertError::InvalidDims(format!(
                "n_qubit must be 2 or 3, got {n_qubit}"
            )));
        }
        Ok(Self { n_cav, n_qubit })
    }

    /// Default space: 20 photon levels, two transmon levels.
    pub fn default_dims() -> Self {
        Self {
            n_cav: Self::DEFAULT_N_CAV,
            n_qubit: 2,
        }
    }

    pub fn n_cav(&self) -> usize {
        self.n_cav
    }

    pub fn n_qubit(&self) -> usize {
        self.n_qubit
    }

    /// Product dimension `n_cav · n_qubit`.
    pub fn total(&self) -> usize {
        self.n_cav * self.n_qubit
    }

    /// Flat product-space index for `(photon, transmon level)`.
    pub fn index(&self, n: usize, q: usize) -> usize {
        n * self.n_qubit + q
    }
}

/// Which tensor factor an operator lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Cavity,
    Transmon,
}

/// Density matrix on the truncated cavity⊗transmon space.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    dims: HilbertDims,
    rho: CMatrix,
}

impl QuantumState {
    /// Wrap a density matrix, enforcing shape, Hermiticity, and unit trace.
    /// Positivity is checked separately by [`QuantumState::check_physical`]
    /// since it requires an eigendecomposition.
    pub fn new(rho: CMatrix, dims: HilbertDims) -> Result<Self, HilbertError> {
        if rho.nrows() != dims.total() || rho.ncols() != dims.total() {
            return Err(HilbertError::DimensionMismatch {
                got: rho.nrows(),
                expected: dims.total(),
            });
        }
        let tol = Tolerances::DEFAULT;
        let defect = linalg::hermiticity_defect(&rho);
        if defect > tol.hermiticity {
            return Err(HilbertError::Unphysical(format!(
                "Hermiticity defect {defect:.3e} exceeds {:.1e}",
                tol.hermiticity
            )));
        }
        let tr = linalg::trace(&rho);
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.trace {
            return Err(HilbertError::Unphysical(format!(
                "trace {tr} deviates from 1 beyond {:.1e}",
                tol.trace
            )));
        }
        Ok(Self { dims, rho })
    }

    /// Construct from a normalized pure ket on the product space.
    pub fn from_ket(ket: &CVector, dims: HilbertDims) -> Result<Self, HilbertError> {
        if ket.len() != dims.total() {
            return Err(HilbertError::DimensionMismatch {
                got: ket.len(),
                expected: dims.total(),
            });
        }
        let d = dims.total();
        let mut rho = CMatrix::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                rho[(i, j)] = ket[i] * ket[j].conj();
            }
        }
        Self::new(rho, dims)
    }

    pub fn dims(&self) -> HilbertDims {
        self.dims
    }

    pub fn rho(&self) -> &CMatrix {
        &self.rho
    }

    pub fn into_rho(self) -> CMatrix {
        self.rho
    }

    /// Full physicality check including the positivity floor.
    pub fn check_physical(&self, tol: &Tolerances) -> Result<(), HilbertError> {
        let defect = linalg::hermiticity_defect(&self.rho);
        if defect > tol.hermiticity {
            return Err(HilbertError::Unphysical(format!(
                "Hermiticity defect {defect:.3e}"
            )));
        }
        let tr = linalg::trace(&self.rho).re;
        if (tr - 1.0).abs() > tol.trace {
            return Err(HilbertError::Unphysical(format!("trace {tr}")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < tol.eigenvalue_floor {
            return Err(HilbertError::Unphysical(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(())
    }

    /// Smallest eigenvalue of the density matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let (eigs, _) = linalg::eigh(&self.rho);
        eigs[0]
    }

    /// Tr(ρ²).
    pub fn purity(&self) -> f64 {
        linalg::trace(&self.rho.dot(&self.rho)).re
    }

    /// Overlap ⟨ψ|ρ|ψ⟩ with a pure product-space target.
    pub fn fidelity_to_ket(&self, ket: &CVector) -> Result<f64, HilbertError> {
        if ket.len() != self.dims.total() {
            return Err(HilbertError::DimensionMismatch {
                got: ket.len(),
                expected: self.dims.total(),
            });
        }
        let mut acc = C_ZERO;
        for i in 0..ket.len() {
            for j in 0..ket.len() {
                acc += ket[i].conj() * self.rho[(i, j)] * ket[j];
            }
        }
        Ok(acc.re)
    }

    /// Photon-number distribution of the cavity, transmon traced out.
    pub fn cavity_populations(&self) -> Vec<f64> {
        let nq = self.dims.n_qubit;
        (0..self.dims.n_cav)
            .map(|n| {
                (0..nq)
                    .map(|q| self.rho[(self.dims.index(n, q), self.dims.index(n, q))].re)
                    .sum()
            })
            .collect()
    }

    /// Reduced cavity density matrix (partial trace over the transmon).
    pub fn cavity_reduced(&self) -> CMatrix {
        let nc = self.dims.n_cav;
        let nq = self.dims.n_qubit;
        let mut out = CMatrix::zeros((nc, nc));
        for n in 0..nc {
            for m in 0..nc {
                let mut acc = C_ZERO;
                for q in 0..nq {
                    acc += self.rho[(self.dims.index(n, q), self.dims.index(m, q))];
                }
                out[(n, m)] = acc;
            }
        }
        out
    }

    /// Population of the transmon excited level, cavity traced out.
    pub fn transmon_excited_population(&self) -> f64 {
        (0..self.dims.n_cav)
            .map(|n| self.rho[(self.dims.index(n, 1), self.dims.index(n, 1))].re)
            .sum()
    }

    /// Mean cavity photon number ⟨a†a⟩.
    pub fn mean_photon_number(&self) -> f64 {
        self.cavity_populations()
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }
}

/// Fock state |n⟩⟨n| ⊗ |g⟩⟨g|.
pub fn fock_state(n: usize, dims: HilbertDims) -> Result<QuantumState, HilbertError> {
    if n >= dims.n_cav() {
        return Err(HilbertError::PhotonOutOfRange {
            n,
            n_cav: dims.n_cav(),
        });
    }
    let mut ket = CVector::zeros(dims.total());
    ket[dims.index(n, 0)] = C_ONE;
    QuantumState::from_ket(&ket, dims)
}

/// Cavity ket of |n⟩ on the bare cavity factor.
pub fn fock_ket(n: usize, n_cav: usize) -> CVector {
    let mut ket = CVector::zeros(n_cav);
    ket[n] = C_ONE;
    ket
}

/// Truncated, renormalized coherent-state ket on the bare cavity factor.
pub fn coherent_ket(alpha: Complex64, n_cav: usize) -> CVector {
    let mut ket = CVector::zeros(n_cav);
    // e^{-|α|²/2} α^n / √(n!) built up iteratively to avoid factorials.
    let mut amp = Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    ket[0] = amp;
    for n in 1..n_cav {
        amp *= alpha / (n as f64).sqrt();
        ket[n] = amp;
    }
    let norm: f64 = ket.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    ket.mapv_into(|z| z / norm)
}

/// Weight of the coherent-state Poisson tail lost to truncation,
/// `1 − Σ_{n<n_cav} e^{−|α|²}|α|^{2n}/n!`.
pub fn coherent_truncation_deficit(alpha: Complex64, n_cav: usize) -> f64 {
    let nbar = alpha.norm_sqr();
    let mut term = (-nbar).exp();
    let mut kept = term;
    for n in 1..n_cav {
        term *= nbar / n as f64;
        kept += term;
    }
    (1.0 - kept).max(0.0)
}

/// Displaced vacuum |α⟩⟨α| ⊗ |g⟩⟨g|, renormalized after truncation.
///
/// Guards against inadequate truncation: requires |α|² ≤ n_cav/4.
pub fn coherent_state(alpha: Complex64, dims: HilbertDims) -> Result<QuantumState, HilbertError> {
    let alpha_sq = alpha.norm_sqr();
    if alpha_sq > dims.n_cav() as f64 / 4.0 {
        return Err(HilbertError::TruncationTooSmall {
            alpha_sq,
            required: (4.0 * alpha_sq).ceil() as usize,
            n_cav: dims.n_cav(),
        });
    }
    let cavity = coherent_ket(alpha, dims.n_cav());
    let ket = lift_cavity_ket(&cavity, dims);
    QuantumState::from_ket(&ket, dims)
}

/// Embed a cavity ket into the product space with the transmon in |g⟩.
pub fn lift_cavity_ket(cavity: &CVector, dims: HilbertDims) -> CVector {
    let mut ket = CVector::zeros(dims.total());
    for n in 0..dims.n_cav() {
        ket[dims.index(n, 0)] = cavity[n];
    }
    ket
}

/// Annihilation operator on the bare cavity factor: a|n⟩ = √n |n−1⟩.
pub fn annihilation_operator(dims: HilbertDims) -> CMatrix {
    ladder_lowering(dims.n_cav())
}

fn ladder_lowering(n_levels: usize) -> CMatrix {
    let mut a = CMatrix::zeros((n_levels, n_levels));
    for n in 1..n_levels {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Photon-number operator a†a on the bare cavity factor.
pub fn number_operator(dims: HilbertDims) -> CMatrix {
    let mut n_op = CMatrix::zeros((dims.n_cav(), dims.n_cav()));
    for n in 0..dims.n_cav() {
        n_op[(n, n)] = Complex64::new(n as f64, 0.0);
    }
    n_op
}

/// Kronecker-lift a single-factor operator to the product space, identity on
/// the other factor. Factor ordering is cavity⊗transmon.
pub fn tensor_lift(op: &CMatrix, which: Factor, dims: HilbertDims) -> Result<CMatrix, HilbertError> {
    let expected = match which {
        Factor::Cavity => dims.n_cav(),
        Factor::Transmon => dims.n_qubit(),
    };
    if op.nrows() != expected || op.ncols() != expected {
        return Err(HilbertError::FactorDimensionMismatch {
            got: op.nrows(),
            expected,
        });
    }
    Ok(match which {
        Factor::Cavity => kron(op, &linalg::identity(dims.n_qubit())),
        Factor::Transmon => kron(&linalg::identity(dims.n_cav()), op),
    })
}

/// Tr(ρ·op). Real to working precision when `op` is Hermitian.
pub fn expectation(state: &QuantumState, op: &CMatrix) -> Result<Complex64, HilbertError> {
    let d = state.dims().total();
    if op.nrows() != d || op.ncols() != d {
        return Err(HilbertError::DimensionMismatch {
            got: op.nrows(),
            expected: d,
        });
    }
    // Tr(ρ·op) = Σ_ij ρ_ij op_ji without forming the product.
    let rho = state.rho();
    let mut acc = C_ZERO;
    for i in 0..d {
        for j in 0..d {
            acc += rho[(i, j)] * op[(j, i)];
        }
    }
    Ok(acc)
}

/// Displacement unitary D(α) = exp(αa† − α*a) on the bare cavity factor.
///
/// Computed through the exact eigendecomposition of the truncated generator:
/// with Φ = diag(e^{i(θ+π/2)n}) for α = r·e^{iθ} and the tridiagonal
/// quadrature T = a + a† = QΛQᵀ, D(α) = Φ·Q·e^{−irΛ}·Qᵀ·Φ†. This equals the
/// matrix exponential of the truncated generator to working precision and is
/// exactly unitary.
pub fn displacement_operator(alpha: Complex64, n_cav: usize) -> CMatrix {
    let basis = DisplacementBasis::new(n_cav);
    basis.displacement(alpha)
}

/// Cached eigendecomposition of the quadrature T = a + a†, reused when many
/// displacements of the same truncation are needed (Wigner grids).
pub struct DisplacementBasis {
    n_cav: usize,
    eigs: Vec<f64>,
    // Real orthogonal eigenvectors of T, stored as complex for reuse.
    q: CMatrix,
}

impl DisplacementBasis {
    pub fn new(n_cav: usize) -> Self {
        let mut t = CMatrix::zeros((n_cav, n_cav));
        for n in 1..n_cav {
            let x = (n as f64).sqrt();
            t[(n - 1, n)] = Complex64::new(x, 0.0);
            t[(n, n - 1)] = Complex64::new(x, 0.0);
        }
        let (eigs, q) = linalg::eigh(&t);
        Self { n_cav, eigs, q }
    }

    pub fn n_cav(&self) -> usize {
        self.n_cav
    }

    /// Build D(α) for this truncation.
    pub fn displacement(&self, alpha: Complex64) -> CMatrix {
        let n = self.n_cav;
        let r = alpha.norm();
        let theta = if r == 0.0 { 0.0 } else { alpha.arg() };
        // Columns of Q scaled by e^{−i r λ_k}.
        let mut qe = CMatrix::zeros((n, n));
        for k in 0..n {
            let ph = Complex64::from_polar(1.0, -r * self.eigs[k]);
            for row in 0..n {
                qe[(row, k)] = self.q[(row, k)] * ph;
            }
        }
        let core = qe.dot(&self.q.t().mapv(|z| z.conj()));
        // Conjugate by Φ = diag(e^{i(θ+π/2)n}).
        let mut d = core;
        for row in 0..n {
            for col in 0..n {
                let ph = Complex64::from_polar(1.0, (theta + std::f64::consts::FRAC_PI_2)
                    * (row as f64 - col as f64));
                d[(row, col)] *= ph;
            }
        }
        d
    }
}
