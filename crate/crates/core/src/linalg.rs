#![allow(clippy::needless_range_loop)]

//! Dense complex-matrix helpers shared across the crate.
//!
//! Everything here operates on `ndarray::Array2<Complex64>`. Matrices are
//! small (product dimension ≲ 100), so plain dense algorithms are used
//! throughout: a cyclic Jacobi eigensolver for Hermitian matrices and
//! Gaussian elimination for the fitter's normal equations.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

/// Dense complex matrix used for operators and density matrices.
pub type CMatrix = Array2<Complex64>;
/// Dense complex vector used for pure-state kets.
pub type CVector = Array1<Complex64>;

pub const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const C_ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const C_I: Complex64 = Complex64::new(0.0, 1.0);

/// Conjugate transpose.
pub fn dagger(m: &CMatrix) -> CMatrix {
    m.t().mapv(|z| z.conj())
}

/// Sum of diagonal entries.
pub fn trace(m: &CMatrix) -> Complex64 {
    m.diag().sum()
}

/// Replace `m` with its Hermitian part `(m + m†)/2`.
pub fn hermitize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
        m[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
    }
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    let n = m.nrows();
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Largest entrywise magnitude of `a − b`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).norm()))
}

/// Frobenius norm.
pub fn frobenius_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Identity matrix of dimension `n`.
pub fn identity(n: usize) -> CMatrix {
    Array2::eye(n)
}

/// Largest entrywise deviation of `U†U` from the identity.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let prod = dagger(u).dot(u);
    max_abs_diff(&prod, &identity(u.nrows()))
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching unitary
/// eigenvector matrix (eigenvectors in columns), so that
/// `m = V · diag(λ) · V†`. The input must be Hermitian; only its upper
/// triangle is trusted.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "eigh requires a square matrix");
    let mut a = m.clone();
    let mut v = identity(n);
    if n == 1 {
        return (vec![a[(0, 0)].re], v);
    }

    let scale: f64 = frobenius_norm(&a).max(1.0);
    let tol = 1e-15 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.norm() <= 1e-300 {
                    continue;
                }
                // Unitary 2x2 rotation J zeroing a[(p,q)]: factor out the
                // phase of the off-diagonal entry, then a real Jacobi
                // rotation. A <- J† A J with
                //   J[.,p] = (c, -s·e^{-iφ}),  J[.,q] = (s, c·e^{-iφ}).
                let r = apq.norm();
                let phase = apq / r;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let zeta = (aqq - app) / (2.0 * r);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * phase.conj() * akq;
                    a[(k, q)] = s * akp + c * phase.conj() * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * phase * aqk;
                    a[(q, k)] = s * apk + c * phase * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * phase.conj() * vkq;
                    v[(k, q)] = s * vkp + c * phase.conj() * vkq;
                }
                a[(p, q)] = C_ZERO;
                a[(q, p)] = C_ZERO;
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let eigs: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&i, &j| eigs[i].partial_cmp(&eigs[j]).unwrap());
    let sorted_eigs: Vec<f64> = order.iter().map(|&i| eigs[i]).collect();
    let mut sorted_v = CMatrix::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            sorted_v[(k, new_col)] = v[(k, old_col)];
        }
    }
    (sorted_eigs, sorted_v)
}

/// Solve the real linear system `A x = b` by Gaussian elimination with
/// partial pivoting. Returns `None` when `A` is numerically singular.
/// Sized for the fitter's normal equations (k ≤ 5).
pub fn solve_real(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    let scale: f64 = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .max(1.0);
    for col in 0..n {
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())?;
        if pivot_val <= 1e-14 * scale {
            return None;
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for c in (row + 1)..n {
            acc -= m[row][c] * x[c];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Invert a small real symmetric matrix; `None` when singular.
pub fn invert_sym(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve_real(a, &e)?);
    }
    // cols[j][i] = (A^-1)_{ij}; transpose into row-major.
    let mut inv = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            inv[i][j] = cols[j][i];
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eigh_diagonalizes_hermitian_matrix() {
        let m = ndarray::array![
            [c(2.0, 0.0), c(0.5, 0.3), c(0.1, -0.2)],
            [c(0.5, -0.3), c(1.0, 0.0), c(0.0, 0.7)],
            [c(0.1, 0.2), c(0.0, -0.7), c(-1.5, 0.0)],
        ];
        let (eigs, v) = eigh(&m);
        assert!(eigs.windows(2).all(|w| w[0] <= w[1]));
        assert!(unitarity_defect(&v) < 1e-12);
        let mut lam = CMatrix::zeros((3, 3));
        for i in 0..3 {
            lam[(i, i)] = c(eigs[i], 0.0);
        }
        let rebuilt = v.dot(&lam).dot(&dagger(&v));
        assert!(max_abs_diff(&rebuilt, &m) < 1e-12);
    }

    #[test]
    fn eigh_real_symmetric_tridiagonal() {
        // a + a† for a 4-level ladder; spectrum symmetric about zero.
        let n = 4;
        let mut m = CMatrix::zeros((n, n));
        for k in 1..n {
            let x = (k as f64).sqrt();
            m[(k - 1, k)] = c(x, 0.0);
            m[(k, k - 1)] = c(x, 0.0);
        }
        let (eigs, _) = eigh(&m);
        for i in 0..n {
            assert_abs_diff_eq!(eigs[i], -eigs[n - 1 - i], epsilon = 1e-13);
        }
    }

    #[test]
    fn solve_real_recovers_solution() {
        let a = vec![
            vec![4.0, 1.0, 0.2],
            vec![1.0, 3.0, -0.5],
            vec![0.2, -0.5, 2.0],
        ];
        let x_true = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| a[i][j] * x_true[j]).sum())
            .collect();
        let x = solve_real(&a, &b).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(x[i], x_true[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn solve_real_rejects_singular() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve_real(&a, &[1.0, 2.0]).is_none());
    }

    #[test]
    fn hermitize_produces_hermitian() {
        let mut m = ndarray::array![[c(1.0, 0.5), c(2.0, 1.0)], [c(0.0, 0.0), c(3.0, -0.4)]];
        hermitize(&mut m);
        assert_eq!(hermiticity_defect(&m), 0.0);
        assert_eq!(m[(0, 0)].im, 0.0);
    }
}
