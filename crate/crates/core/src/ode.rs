//! Adaptive Dormand-Prince 5(4) stepper for complex-valued systems.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t:e} s (dt = {dt:e} s < {dt_min:e} s)")]
    StepUnderflow { t: f64, dt: f64, dt_min: f64 },
    #[error("non-finite state at t = {t:e} s")]
    NonFinite { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub dt_initial: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// 5th-order weights minus embedded 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `dy/dt = f(t, y)` from `t0` to `t1` in place.
///
/// `f` writes the derivative into its third argument. The last stage is reused
/// as the first stage of the next step (FSAL).
pub fn integrate<F>(mut f: F, y: &mut [Complex64], t0: f64, t1: f64, opts: &OdeOptions) -> Result<OdeStats, OdeError>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    let n = y.len();
    let mut stats = OdeStats::default();
    if t1 <= t0 || n == 0 {
        return Ok(stats);
    }
    let mut k: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); n]; 7];
    let mut ytmp = vec![Complex64::new(0.0, 0.0); n];
    let mut ynew = vec![Complex64::new(0.0, 0.0); n];

    let mut t = t0;
    let mut dt = opts.dt_initial.min(opts.dt_max).min(t1 - t0);
    f(t, y, &mut k[0]);
    stats.rhs_evals += 1;

    while t < t1 {
        let last = t + dt >= t1;
        if last {
            dt = t1 - t;
        }
        for s in 1..7 {
            ytmp.copy_from_slice(y);
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j] * dt;
                if a != 0.0 {
                    for (yt, kv) in ytmp.iter_mut().zip(kj) {
                        *yt += kv * a;
                    }
                }
            }
            f(t + C[s] * dt, &ytmp, &mut k[s]);
            stats.rhs_evals += 1;
            if s == 6 {
                ynew.copy_from_slice(&ytmp);
            }
        }

        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut e = Complex64::new(0.0, 0.0);
            for (s, ks) in k.iter().enumerate() {
                if E[s] != 0.0 {
                    e += ks[i] * E[s];
                }
            }
            let scale = opts.abs_tol + opts.rel_tol * y[i].norm().max(ynew[i].norm());
            err = err.max((e * dt).norm() / scale);
        }
        if !err.is_finite() {
            return Err(OdeError::NonFinite { t });
        }

        if err <= 1.0 {
            t = if last { t1 } else { t + dt };
            y.copy_from_slice(&ynew);
            k.swap(0, 6);
            stats.accepted += 1;
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            dt = (dt * factor).min(opts.dt_max);
        } else {
            stats.rejected += 1;
            dt *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            if dt < opts.dt_min {
                return Err(OdeError::StepUnderflow { t, dt, dt_min: opts.dt_min });
            }
        }
    }
    Ok(stats)
}
