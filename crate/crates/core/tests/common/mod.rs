//! Reference solutions used by the integration tests.
//!
//! The right-hand side here is written out again from the model equations
//! rather than borrowed from the library, so the comparison checks both
//! the equations and the adaptive integrator.

#![allow(dead_code)]

use drumctl_core::reactor::{equilibrium_state, DrumWorthMode, ReactorParams, ReactorState};

pub const N: usize = 20;

pub struct Oracle {
    pub p: ReactorParams<f64>,
    theta_ref: [f64; 8],
    tf_ref: f64,
    tm_ref: f64,
    tc_ref: f64,
    x_ref: f64,
    /// Extra reactivity in pcm.
    pub external_pcm: f64,
}

fn worth(theta_deg: f64, max_pcm: f64) -> f64 {
    0.5 * max_pcm * (1.0 - theta_deg.to_radians().cos())
}

impl Oracle {
    pub fn new(p: ReactorParams<f64>, reference: &ReactorState<f64>) -> Self {
        Self {
            theta_ref: reference.theta,
            tf_ref: reference.t_f,
            tm_ref: reference.t_m,
            tc_ref: reference.t_c,
            x_ref: reference.conc_x,
            p,
            external_pcm: 0.0,
        }
    }

    pub fn at_equilibrium(power_fraction: f64) -> (Self, ReactorState<f64>) {
        let p = ReactorParams::<f64>::holos_quad();
        let s = equilibrium_state(power_fraction, 90.0, &p).unwrap();
        (Self::new(p, &s), s)
    }

    pub fn rhs(&self, y: &[f64; N], speeds: &[f64; 8]) -> [f64; N] {
        let p = &self.p;
        let share = match p.drum_worth_mode {
            DrumWorthMode::PerDrum => 1.0,
            DrumWorthMode::Total => 1.0 / 8.0,
        };
        let n = y[0];
        let c = &y[1..7];
        let (tf, tm, tc, xi, xx) = (y[7], y[8], y[9], y[10], y[11]);
        let theta = &y[12..20];

        let mut rho_pcm = self.external_pcm;
        for i in 0..8 {
            rho_pcm += share * (worth(theta[i], p.rho_d_max) - worth(self.theta_ref[i], p.rho_d_max));
        }
        rho_pcm += p.alpha_f * (tf - self.tf_ref) + p.alpha_m * (tm - self.tm_ref) + p.alpha_c * (tc - self.tc_ref);
        let sigma_x = p.sigma_x * p.sigma_x_area_scale;
        let rho = rho_pcm * 1e-5 - sigma_x * p.v_th * (xx - self.x_ref);
        let beta = p.beta_total * 1e-5;

        let mut dy = [0.0; N];
        dy[0] = (rho - beta) / p.lambda_gen * n;
        for g in 0..6 {
            dy[0] += p.beta[g] * 1e-5 / p.lambda_gen * c[g];
            dy[1 + g] = p.lambda[g] * (n - c[g]);
        }
        let power = p.p_r * n;
        dy[7] = (p.q_frac * power - p.k_fm * (tf - tm)) / (p.m_f * p.c_f);
        dy[8] = ((1.0 - p.q_frac) * power + p.k_fm * (tf - tm) - p.k_mc * (tm - tc)) / (p.m_m * p.c_m);
        dy[9] = (p.k_mc * (tm - tc) - p.mdot_c * p.c_c * (tc - p.t_in)) / (p.m_c * p.c_c);
        let flux = p.v_th * p.n_0 * n;
        dy[10] = p.gamma_i * p.sigma_f * flux - p.lambda_i * xi;
        dy[11] = p.gamma_x * p.sigma_f * flux + p.lambda_i * xi - p.lambda_x * xx - sigma_x * flux * xx;
        dy[12..20].copy_from_slice(speeds);
        dy
    }

    /// Classical RK4 with a fixed step over `[0, duration]`.
    pub fn rk4(&self, y0: &[f64; N], speeds: &[f64; 8], duration: f64, dt: f64) -> [f64; N] {
        let steps = (duration / dt).round() as usize;
        let h = duration / steps as f64;
        let mut y = *y0;
        let add = |y: &[f64; N], k: &[f64; N], s: f64| -> [f64; N] { std::array::from_fn(|i| y[i] + s * k[i]) };
        for _ in 0..steps {
            let k1 = self.rhs(&y, speeds);
            let k2 = self.rhs(&add(&y, &k1, h / 2.0), speeds);
            let k3 = self.rhs(&add(&y, &k2, h / 2.0), speeds);
            let k4 = self.rhs(&add(&y, &k3, h), speeds);
            for i in 0..N {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    }
}

/// The scripted transient: all drums +0.1 deg/s for 50 s, then hold.
pub fn ramp_then_hold(t_start: usize) -> [f64; 8] {
    if t_start < 50 {
        [0.1; 8]
    } else {
        [0.0; 8]
    }
}

/// Relative difference with a tiny absolute floor.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
