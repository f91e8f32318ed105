//! Embedded adaptive Runge–Kutta integrator (Dormand–Prince 5(4)) over a
//! flat complex state vector.
//!
//! Error control is per-component with mixed absolute/relative scaling and
//! the usual PI-free step controller. The FSAL property is exploited. An
//! `on_accept` hook runs after every accepted step so callers can project
//! the state back onto their constraint manifold (Hermitization for density
//! matrices).

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IntegrationError {
    #[error("step size underflow at t = {t_reached:.6e} s (h = {h:.3e})")]
    StepUnderflow { t_reached: f64, h: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t_reached:.6e} s")]
    StepBudgetExhausted { t_reached: f64, max_steps: usize },
}

impl IntegrationError {
    pub fn t_reached(&self) -> f64 {
        match self {
            IntegrationError::StepUnderflow { t_reached, .. } => *t_reached,
            IntegrationError::StepBudgetExhausted { t_reached, .. } => *t_reached,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RkOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for RkOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RkStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

// 5th-order weights (equal to the last row of A: FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

// Embedded 4th-order weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate `dy/dt = rhs(y)` from `t = 0` to `t = duration` in place.
///
/// The right-hand side must be autonomous (all coefficients in this crate
/// are time-independent).
pub fn integrate_adaptive<R, P>(
    y: &mut [Complex64],
    duration: f64,
    mut rhs: R,
    mut on_accept: P,
    opts: &RkOptions,
) -> Result<RkStats, IntegrationError>
where
    R: FnMut(&[Complex64], &mut [Complex64]),
    P: FnMut(&mut [Complex64]),
{
    assert!(duration >= 0.0, "duration must be nonnegative");
    let mut stats = RkStats::default();
    if duration == 0.0 {
        return Ok(stats);
    }

    let dim = y.len();
    let mut k: Vec<Vec<Complex64>> = (0..7).map(|_| vec![Complex64::default(); dim]).collect();
    let mut y_stage = vec![Complex64::default(); dim];
    let mut y_new = vec![Complex64::default(); dim];

    let mut t = 0.0f64;
    let mut h = (duration * 1e-3).min(duration);
    let h_min = duration * 1e-15;

    rhs(y, &mut k[0]);
    stats.rhs_evals += 1;

    while t < duration {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(IntegrationError::StepBudgetExhausted {
                t_reached: t,
                max_steps: opts.max_steps,
            });
        }
        if h < h_min || !h.is_finite() {
            return Err(IntegrationError::StepUnderflow { t_reached: t, h });
        }
        if t + h > duration {
            h = duration - t;
        }

        for stage in 0..6 {
            for i in 0..dim {
                let mut acc = Complex64::default();
                for (j, k_j) in k.iter().enumerate().take(stage + 1) {
                    let a = A[stage][j];
                    if a != 0.0 {
                        acc += a * k_j[i];
                    }
                }
                y_stage[i] = y[i] + h * acc;
            }
            rhs(&y_stage, &mut k[stage + 1]);
            stats.rhs_evals += 1;
        }

        // 5th-order solution and embedded error estimate.
        let mut err_sq = 0.0f64;
        for i in 0..dim {
            let mut acc5 = Complex64::default();
            let mut acc_err = Complex64::default();
            for j in 0..7 {
                if B5[j] != 0.0 {
                    acc5 += B5[j] * k[j][i];
                }
                let diff = B5[j] - B4[j];
                if diff != 0.0 {
                    acc_err += diff * k[j][i];
                }
            }
            y_new[i] = y[i] + h * acc5;
            let scale = opts.atol + opts.rtol * y[i].norm().max(y_new[i].norm());
            let e = (h * acc_err).norm() / scale;
            err_sq += e * e;
        }
        let err = (err_sq / dim as f64).sqrt();

        if err.is_finite() && err <= 1.0 {
            t += h;
            y.copy_from_slice(&y_new);
            on_accept(y);
            stats.accepted += 1;
            // FSAL: k7 was evaluated at y_new, but on_accept may have
            // projected the state; re-evaluating keeps the pair consistent.
            rhs(y, &mut k[0]);
            stats.rhs_evals += 1;
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h * factor).min(duration - t + f64::MIN_POSITIVE);
        } else {
            stats.rejected += 1;
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h *= factor;
        }
    }

    Ok(stats)
}
