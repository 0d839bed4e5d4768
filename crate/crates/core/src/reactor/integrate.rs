//! Dormand–Prince 5(4) embedded Runge–Kutta with adaptive step control.
//!
//! Works on fixed-size state arrays so the reactor ODE never allocates in
//! the inner loop. Step-size control follows the usual Hairer/Wanner
//! recipe: mixed absolute/relative RMS error norm, safety factor 0.9,
//! growth clamped to [0.2, 10], no growth right after a rejection.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
// Fifth-order weights; also the last row of the tableau (FSAL).
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between fifth- and fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance<T> {
    pub rtol: T,
    pub atol: T,
    /// Accepted plus rejected sub-steps allowed for one call.
    pub max_substeps: usize,
}

impl<T: Scalar> Default for Tolerance<T> {
    fn default() -> Self {
        Self {
            rtol: T::lit(1e-6),
            atol: T::lit(1e-9),
            max_substeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure<T, const N: usize> {
    pub reason: String,
    /// Time of the last accepted sub-step.
    pub t: T,
    /// State at `t`.
    pub y: [T; N],
}

/// One explicit Dormand–Prince step of size `h` starting from `(t, y)` with
/// `k1 = f(t, y)` already evaluated.
///
/// Returns the fifth-order solution, the embedded error estimate and the
/// derivative at the new point (reusable as the next `k1`).
pub fn dopri5_step<T, F, const N: usize>(
    f: &mut F,
    t: T,
    y: &[T; N],
    k1: &[T; N],
    h: T,
) -> ([T; N], [T; N], [T; N])
where
    T: Scalar,
    F: FnMut(T, &[T; N], &mut [T; N]),
{
    let l = T::lit;
    let mut tmp = [T::zero(); N];
    let mut k2 = [T::zero(); N];
    let mut k3 = [T::zero(); N];
    let mut k4 = [T::zero(); N];
    let mut k5 = [T::zero(); N];
    let mut k6 = [T::zero(); N];
    let mut k7 = [T::zero(); N];

    for i in 0..N {
        tmp[i] = y[i] + h * l(A21) * k1[i];
    }
    f(t + l(C2) * h, &tmp, &mut k2);
    for i in 0..N {
        tmp[i] = y[i] + h * (l(A31) * k1[i] + l(A32) * k2[i]);
    }
    f(t + l(C3) * h, &tmp, &mut k3);
    for i in 0..N {
        tmp[i] = y[i] + h * (l(A41) * k1[i] + l(A42) * k2[i] + l(A43) * k3[i]);
    }
    f(t + l(C4) * h, &tmp, &mut k4);
    for i in 0..N {
        tmp[i] = y[i] + h * (l(A51) * k1[i] + l(A52) * k2[i] + l(A53) * k3[i] + l(A54) * k4[i]);
    }
    f(t + l(C5) * h, &tmp, &mut k5);
    for i in 0..N {
        tmp[i] = y[i]
            + h * (l(A61) * k1[i] + l(A62) * k2[i] + l(A63) * k3[i] + l(A64) * k4[i]
                + l(A65) * k5[i]);
    }
    f(t + h, &tmp, &mut k6);
    let mut y_new = [T::zero(); N];
    for i in 0..N {
        y_new[i] = y[i]
            + h * (l(B1) * k1[i] + l(B3) * k3[i] + l(B4) * k4[i] + l(B5) * k5[i]
                + l(B6) * k6[i]);
    }
    f(t + h, &y_new, &mut k7);
    let mut err = [T::zero(); N];
    for i in 0..N {
        err[i] = h
            * (l(E1) * k1[i] + l(E3) * k3[i] + l(E4) * k4[i] + l(E5) * k5[i] + l(E6) * k6[i]
                + l(E7) * k7[i]);
    }
    (y_new, err, k7)
}

fn error_norm<T: Scalar, const N: usize>(
    y: &[T; N],
    y_new: &[T; N],
    err: &[T; N],
    tol: &Tolerance<T>,
) -> T {
    let mut acc = T::zero();
    for i in 0..N {
        let scale = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
        let r = err[i] / scale;
        acc += r * r;
    }
    (acc / T::lit(N as f64)).sqrt()
}

fn rms_scaled<T: Scalar, const N: usize>(v: &[T; N], y: &[T; N], tol: &Tolerance<T>) -> T {
    let mut acc = T::zero();
    for i in 0..N {
        let r = v[i] / (tol.atol + tol.rtol * y[i].abs());
        acc += r * r;
    }
    (acc / T::lit(N as f64)).sqrt()
}

/// Initial step guess (Hairer, Nørsett & Wanner, II.4).
fn initial_step<T, F, const N: usize>(
    f: &mut F,
    t: T,
    y: &[T; N],
    k1: &[T; N],
    span: T,
    tol: &Tolerance<T>,
) -> T
where
    T: Scalar,
    F: FnMut(T, &[T; N], &mut [T; N]),
{
    let d0 = rms_scaled(y, y, tol);
    let d1 = rms_scaled(k1, y, tol);
    let mut h0 = if d0 < T::lit(1e-5) || d1 < T::lit(1e-5) {
        T::lit(1e-6)
    } else {
        T::lit(0.01) * d0 / d1
    };
    h0 = h0.min(span);
    let mut y1 = [T::zero(); N];
    for i in 0..N {
        y1[i] = y[i] + h0 * k1[i];
    }
    let mut f1 = [T::zero(); N];
    f(t + h0, &y1, &mut f1);
    let mut diff = [T::zero(); N];
    for i in 0..N {
        diff[i] = f1[i] - k1[i];
    }
    let d2 = rms_scaled(&diff, y, tol) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= T::lit(1e-15) {
        (h0 * T::lit(1e-3)).max(T::lit(1e-6))
    } else {
        (T::lit(0.01) / dmax).powf(T::lit(0.2))
    };
    (T::lit(100.0) * h0).min(h1).min(span)
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` with adaptive sub-steps.
pub fn integrate_adaptive<T, F, const N: usize>(
    mut f: F,
    t0: T,
    y0: [T; N],
    t1: T,
    tol: &Tolerance<T>,
) -> Result<([T; N], StepStats), Failure<T, N>>
where
    T: Scalar,
    F: FnMut(T, &[T; N], &mut [T; N]),
{
    let mut stats = StepStats::default();
    let mut t = t0;
    let mut y = y0;
    if !(t1 > t0) {
        return Ok((y, stats));
    }
    let fail = |reason: &str, t: T, y: [T; N]| Failure {
        reason: reason.to_string(),
        t,
        y,
    };
    let mut k1 = [T::zero(); N];
    f(t, &y, &mut k1);
    stats.evaluations += 1;
    if k1.iter().any(|v| !v.is_finite()) {
        return Err(fail("non-finite derivative at start", t, y));
    }
    let span = t1 - t0;
    let mut h = initial_step(&mut f, t, &y, &k1, span, tol);
    stats.evaluations += 1;
    let h_min = T::lit(16.0) * T::epsilon() * t1.abs().max(T::one());
    let mut last_rejected = false;

    while t < t1 {
        if stats.accepted + stats.rejected >= tol.max_substeps {
            return Err(fail("sub-step budget exhausted", t, y));
        }
        let remaining = t1 - t;
        // snap to the end when the leftover would be a sliver
        if h >= remaining || remaining - h < h_min {
            h = remaining;
        }
        let (y_new, err, k7) = dopri5_step(&mut f, t, &y, &k1, h);
        stats.evaluations += 6;
        let en = error_norm(&y, &y_new, &err, tol);
        if en.is_finite() && en <= T::one() && y_new.iter().all(|v| v.is_finite()) {
            stats.accepted += 1;
            t = if h == remaining { t1 } else { t + h };
            y = y_new;
            k1 = k7;
            let mut fac = if en == T::zero() {
                T::lit(10.0)
            } else {
                (T::lit(0.9) * en.powf(T::lit(-0.2))).min(T::lit(10.0)).max(T::lit(0.2))
            };
            if last_rejected {
                fac = fac.min(T::one());
            }
            last_rejected = false;
            h *= fac;
        } else {
            stats.rejected += 1;
            last_rejected = true;
            let fac = if en.is_finite() {
                (T::lit(0.9) * en.powf(T::lit(-0.2))).max(T::lit(0.2))
            } else {
                T::lit(0.25)
            };
            h *= fac.min(T::lit(0.9));
            if h < h_min {
                return Err(fail("step size underflow", t, y));
            }
        }
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let tol = Tolerance {
            rtol: 1e-10,
            atol: 1e-12,
            max_substeps: 10_000,
        };
        let (y, stats) =
            integrate_adaptive(|_t, y: &[f64; 1], dy: &mut [f64; 1]| dy[0] = -2.0 * y[0], 0.0, [1.0], 3.0, &tol)
                .unwrap();
        assert!((y[0] - (-6.0f64).exp()).abs() < 1e-10);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn linear_growth_is_exact() {
        let tol = Tolerance::default();
        let (y, _) =
            integrate_adaptive(|_t, _y: &[f64; 1], dy: &mut [f64; 1]| dy[0] = 0.5, 0.0, [90.0], 1.0, &tol)
                .unwrap();
        assert_eq!(y[0], 90.5);
    }

    #[test]
    fn harmonic_oscillator_in_f32() {
        let tol = Tolerance::<f32> {
            rtol: 1e-5,
            atol: 1e-6,
            max_substeps: 10_000,
        };
        let (y, _) = integrate_adaptive(
            |_t, y: &[f32; 2], dy: &mut [f32; 2]| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0f32,
            [1.0, 0.0],
            std::f32::consts::PI,
            &tol,
        )
        .unwrap();
        assert!((y[0] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn nan_right_hand_side_fails() {
        let tol = Tolerance::default();
        let res = integrate_adaptive(
            |_t, _y: &[f64; 1], dy: &mut [f64; 1]| dy[0] = f64::NAN,
            0.0,
            [1.0],
            1.0,
            &tol,
        );
        assert!(res.is_err());
    }

    #[test]
    fn blow_up_reports_last_good_state() {
        let tol = Tolerance {
            rtol: 1e-6,
            atol: 1e-9,
            max_substeps: 200,
        };
        // y' = y², y(0) = 1 explodes at t = 1
        let err = integrate_adaptive(
            |_t, y: &[f64; 1], dy: &mut [f64; 1]| dy[0] = y[0] * y[0],
            0.0,
            [1.0],
            2.0,
            &tol,
        )
        .unwrap_err();
        assert!(err.t < 1.0);
        assert!(err.y[0].is_finite());
    }
}
