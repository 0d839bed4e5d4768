//! Point-kinetics reactor with lumped thermal and iodine/xenon feedback.
//!
//! Reactivity is a deviation model: drum, temperature and xenon terms are
//! measured from the equilibrium the episode starts in, so that
//! equilibrium is an exact fixed point of [`ReactorModel::derivatives`].

pub mod integrate;
pub mod params;
pub mod state;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use integrate::{StepStats, Tolerance};
pub use params::{DrumWorthMode, ReactorParams, NUM_GROUPS, PCM};
pub use state::{ReactorState, STATE_DIM};

use state::{IDX_C, IDX_I, IDX_N, IDX_TC, IDX_TF, IDX_THETA, IDX_TM, IDX_X};

pub const NUM_DRUMS: usize = 8;
/// Drum speed limit (deg/s).
pub const MAX_DRUM_SPEED: f64 = 0.5;
/// Default starting angle: maximum differential worth.
pub const THETA_0: f64 = 90.0;

fn check_angle<T: Scalar>(theta_deg: T) -> Result<()> {
    if theta_deg >= T::zero() && theta_deg <= T::lit(180.0) {
        Ok(())
    } else {
        Err(Error::domain(format!("drum angle {theta_deg} outside [0, 180] deg")))
    }
}

#[inline]
fn worth_unchecked<T: Scalar>(theta_deg: T, rho_max: T) -> T {
    rho_max / T::lit(2.0) * (T::one() - theta_deg.to_radians().cos())
}

/// Cosine drum worth (pcm) at `theta_deg`, using the full `rho_d_max`.
pub fn drum_worth<T: Scalar>(theta_deg: T, params: &ReactorParams<T>) -> Result<T> {
    check_angle(theta_deg)?;
    Ok(worth_unchecked(theta_deg, params.rho_d_max))
}

/// Differential drum worth (pcm/rad).
pub fn diff_drum_worth<T: Scalar>(theta_deg: T, params: &ReactorParams<T>) -> Result<T> {
    check_angle(theta_deg)?;
    Ok(params.rho_d_max / T::lit(2.0) * theta_deg.to_radians().sin())
}

/// Per-drum rotation command for one control interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrumCommand<T> {
    speeds: [T; NUM_DRUMS],
    mask: [bool; NUM_DRUMS],
}

impl<T: Scalar> DrumCommand<T> {
    /// Speeds are clamped to ±0.5 deg/s; masked-off drums hold position.
    pub fn new(speeds: [T; NUM_DRUMS], mask: [bool; NUM_DRUMS]) -> Self {
        let lim = T::lit(MAX_DRUM_SPEED);
        let speeds = speeds.map(|s| if s.is_nan() { T::zero() } else { s.max(-lim).min(lim) });
        Self { speeds, mask }
    }

    pub fn uniform(speed: T) -> Self {
        Self::new([speed; NUM_DRUMS], [true; NUM_DRUMS])
    }

    pub fn hold() -> Self {
        Self::uniform(T::zero())
    }

    /// Effective rate of drum `i` (0 when disabled).
    #[inline]
    pub fn speed(&self, i: usize) -> T {
        if self.mask[i] {
            self.speeds[i]
        } else {
            T::zero()
        }
    }

    pub fn speeds(&self) -> [T; NUM_DRUMS] {
        std::array::from_fn(|i| self.speed(i))
    }

    pub fn mask(&self) -> [bool; NUM_DRUMS] {
        self.mask
    }
}

/// Equilibrium quantities that deviations are measured from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference<T> {
    pub theta: [T; NUM_DRUMS],
    pub t_f: T,
    pub t_m: T,
    pub t_c: T,
    pub conc_x: T,
}

impl<T: Scalar> Reference<T> {
    pub fn from_state(state: &ReactorState<T>) -> Self {
        Self {
            theta: state.theta,
            t_f: state.t_f,
            t_m: state.t_m,
            t_c: state.t_c,
            conc_x: state.conc_x,
        }
    }
}

/// Solves the steady state at `power_fraction` of rated power with every
/// drum at `theta_0` degrees.
pub fn equilibrium_state<T: Scalar>(
    power_fraction: T,
    theta_0: T,
    params: &ReactorParams<T>,
) -> Result<ReactorState<T>> {
    if !(power_fraction > T::zero()) || !power_fraction.is_finite() {
        return Err(Error::domain(format!(
            "power fraction must be positive, got {power_fraction}"
        )));
    }
    if !(theta_0 > T::zero() && theta_0 < T::lit(180.0)) {
        return Err(Error::domain(format!("initial drum angle {theta_0} outside (0, 180)")));
    }
    params.validate()?;
    let n = power_fraction;
    let p = params.p_r * n;
    let t_c = params.t_in + p / (params.mdot_c * params.c_c);
    let t_m = t_c + p / params.k_mc;
    let t_f = t_m + params.q_frac * p / params.k_fm;
    let flux = params.rated_flux() * n;
    let fission = params.sigma_f * flux;
    let conc_i = params.gamma_i * fission / params.lambda_i;
    let conc_x = (params.gamma_x * fission + params.lambda_i * conc_i)
        / (params.lambda_x + params.sigma_x_internal() * flux);
    Ok(ReactorState {
        n_bar: n,
        c_bar: [n; NUM_GROUPS],
        t_f,
        t_m,
        t_c,
        conc_i,
        conc_x,
        theta: [theta_0; NUM_DRUMS],
        t: T::zero(),
    })
}

/// Absolute xenon poison worth `sigma_X * v * X`.
pub fn xenon_poison<T: Scalar>(conc_x: T, params: &ReactorParams<T>) -> T {
    params.sigma_x_internal() * params.v_th * conc_x
}

/// Total reactivity (absolute Δk/k) relative to `reference`.
pub fn total_reactivity<T: Scalar>(
    state: &ReactorState<T>,
    reference: &Reference<T>,
    params: &ReactorParams<T>,
) -> T {
    let pcm = T::lit(PCM);
    let drums = drum_reactivity_pcm(&state.theta, reference, params);
    let thermal = params.alpha_f * (state.t_f - reference.t_f)
        + params.alpha_m * (state.t_m - reference.t_m)
        + params.alpha_c * (state.t_c - reference.t_c);
    let xenon = xenon_poison(state.conc_x, params) - xenon_poison(reference.conc_x, params);
    (drums + thermal) * pcm - xenon
}

fn drum_reactivity_pcm<T: Scalar>(
    theta: &[T; NUM_DRUMS],
    reference: &Reference<T>,
    params: &ReactorParams<T>,
) -> T {
    let max = T::lit(180.0);
    let mut sum = T::zero();
    for (&th, &th_ref) in theta.iter().zip(reference.theta.iter()) {
        let th = th.max(T::zero()).min(max);
        sum += worth_unchecked(th, params.rho_d_max) - worth_unchecked(th_ref, params.rho_d_max);
    }
    sum * params.drum_share()
}

/// Rate constants folded once per model so the right-hand side is cheap.
#[derive(Debug, Clone, Copy)]
struct Rates<T> {
    beta: T,
    inv_gen: T,
    beta_over_gen: [T; NUM_GROUPS],
    lambda: [T; NUM_GROUPS],
    fuel_source: T,
    mod_source: T,
    inv_cap_f: T,
    inv_cap_m: T,
    inv_cap_c: T,
    flow: T,
    iodine_source: T,
    xenon_source: T,
    burnout: T,
    poison: T,
}

impl<T: Scalar> Rates<T> {
    fn new(p: &ReactorParams<T>) -> Self {
        let pcm = T::lit(PCM);
        let inv_gen = T::one() / p.lambda_gen;
        let fission = p.sigma_f * p.rated_flux();
        Self {
            beta: p.beta_abs(),
            inv_gen,
            beta_over_gen: p.beta.map(|b| b * pcm * inv_gen),
            lambda: p.lambda,
            fuel_source: p.q_frac * p.p_r,
            mod_source: (T::one() - p.q_frac) * p.p_r,
            inv_cap_f: T::one() / (p.m_f * p.c_f),
            inv_cap_m: T::one() / (p.m_m * p.c_m),
            inv_cap_c: T::one() / (p.m_c * p.c_c),
            flow: p.mdot_c * p.c_c,
            iodine_source: p.gamma_i * fission,
            xenon_source: p.gamma_x * fission,
            burnout: p.sigma_x_internal() * p.rated_flux(),
            poison: p.sigma_x_internal() * p.v_th,
        }
    }
}

/// Raised when the adaptive integrator cannot complete an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationFailure<T> {
    pub reason: String,
    pub last_good: ReactorState<T>,
}

impl<T: Scalar> std::fmt::Display for IntegrationFailure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (last good t = {} s)", self.reason, self.last_good.t)
    }
}

impl<T: Scalar> std::error::Error for IntegrationFailure<T> {}

impl<T: Scalar> From<IntegrationFailure<T>> for Error {
    fn from(e: IntegrationFailure<T>) -> Self {
        Error::Integration {
            time: e.last_good.t.to_f64_lossy(),
            reason: e.reason,
        }
    }
}

/// Parameters plus the equilibrium reference defining reactivity deviations.
#[derive(Debug, Clone)]
pub struct ReactorModel<T> {
    params: ReactorParams<T>,
    reference: Reference<T>,
    rates: Rates<T>,
    /// Extra constant reactivity (absolute), used to script step insertions.
    external_reactivity: T,
}

impl<T: Scalar> ReactorModel<T> {
    pub fn new(params: ReactorParams<T>, reference: Reference<T>) -> Result<Self> {
        params.validate()?;
        let rates = Rates::new(&params);
        Ok(Self {
            params,
            reference,
            rates,
            external_reactivity: T::zero(),
        })
    }

    /// Builds the model around `equilibrium_state(power_fraction, theta_0)`
    /// and returns it together with that state.
    pub fn at_equilibrium(
        params: ReactorParams<T>,
        power_fraction: T,
        theta_0: T,
    ) -> Result<(Self, ReactorState<T>)> {
        let state = equilibrium_state(power_fraction, theta_0, &params)?;
        let model = Self::new(params, Reference::from_state(&state))?;
        Ok((model, state))
    }

    pub fn with_external_reactivity_pcm(mut self, pcm: T) -> Self {
        self.external_reactivity = pcm * T::lit(PCM);
        self
    }

    pub fn params(&self) -> &ReactorParams<T> {
        &self.params
    }

    pub fn reference(&self) -> &Reference<T> {
        &self.reference
    }

    /// Total reactivity including any scripted external insertion.
    pub fn reactivity(&self, state: &ReactorState<T>) -> T {
        total_reactivity(state, &self.reference, &self.params) + self.external_reactivity
    }

    /// Xenon reactivity relative to the reference (pcm, negative when
    /// xenon has built up).
    pub fn xenon_reactivity_pcm(&self, state: &ReactorState<T>) -> T {
        -(xenon_poison(state.conc_x, &self.params) - xenon_poison(self.reference.conc_x, &self.params))
            / T::lit(PCM)
    }

    #[inline]
    fn rhs(&self, y: &[T; STATE_DIM], speeds: &[T; NUM_DRUMS], dy: &mut [T; STATE_DIM]) {
        let r = &self.rates;
        let p = &self.params;
        let n = y[IDX_N];
        let (t_f, t_m, t_c) = (y[IDX_TF], y[IDX_TM], y[IDX_TC]);
        let (ci, cx) = (y[IDX_I], y[IDX_X]);

        let mut theta = [T::zero(); NUM_DRUMS];
        theta.copy_from_slice(&y[IDX_THETA..]);
        let drums = drum_reactivity_pcm(&theta, &self.reference, p);
        let thermal = p.alpha_f * (t_f - self.reference.t_f)
            + p.alpha_m * (t_m - self.reference.t_m)
            + p.alpha_c * (t_c - self.reference.t_c);
        let xenon = r.poison * (cx - self.reference.conc_x);
        let rho = (drums + thermal) * T::lit(PCM) - xenon + self.external_reactivity;

        let mut delayed = T::zero();
        for g in 0..NUM_GROUPS {
            let c = y[IDX_C + g];
            delayed += r.beta_over_gen[g] * c;
            dy[IDX_C + g] = r.lambda[g] * (n - c);
        }
        dy[IDX_N] = (rho - r.beta) * r.inv_gen * n + delayed;

        let q_fm = p.k_fm * (t_f - t_m);
        let q_mc = p.k_mc * (t_m - t_c);
        dy[IDX_TF] = (r.fuel_source * n - q_fm) * r.inv_cap_f;
        dy[IDX_TM] = (r.mod_source * n + q_fm - q_mc) * r.inv_cap_m;
        dy[IDX_TC] = (q_mc - r.flow * (t_c - p.t_in)) * r.inv_cap_c;

        dy[IDX_I] = r.iodine_source * n - p.lambda_i * ci;
        dy[IDX_X] = r.xenon_source * n - p.lambda_x * cx + p.lambda_i * ci - r.burnout * n * cx;

        dy[IDX_THETA..].copy_from_slice(speeds);
    }

    /// Right-hand side of the coupled system, packed as a state record
    /// (`t` carries `dt/dt = 1`).
    pub fn derivatives(&self, state: &ReactorState<T>, command: &DrumCommand<T>) -> ReactorState<T> {
        let mut dy = [T::zero(); STATE_DIM];
        self.rhs(&state.to_vector(), &command.speeds(), &mut dy);
        ReactorState::from_vector(&dy, T::one())
    }

    /// Advances the state by `dt` seconds holding `command` constant.
    pub fn integrate_step(
        &self,
        state: &ReactorState<T>,
        command: &DrumCommand<T>,
        dt: T,
        tol: &Tolerance<T>,
    ) -> std::result::Result<ReactorState<T>, IntegrationFailure<T>> {
        self.integrate_step_with_stats(state, command, dt, tol).map(|(s, _)| s)
    }

    pub fn integrate_step_with_stats(
        &self,
        state: &ReactorState<T>,
        command: &DrumCommand<T>,
        dt: T,
        tol: &Tolerance<T>,
    ) -> std::result::Result<(ReactorState<T>, StepStats), IntegrationFailure<T>> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(IntegrationFailure {
                reason: format!("non-positive step {dt}"),
                last_good: *state,
            });
        }
        let speeds = command.speeds();
        let t0 = state.t;
        let result = integrate::integrate_adaptive(
            |_t, y: &[T; STATE_DIM], dy: &mut [T; STATE_DIM]| self.rhs(y, &speeds, dy),
            T::zero(),
            state.to_vector(),
            dt,
            tol,
        );
        match result {
            Ok((y, stats)) => {
                let mut next = ReactorState::from_vector(&y, t0 + dt);
                // angles move linearly, so the clamp is exact
                let max = T::lit(180.0);
                for (th, (&th0, &s)) in next.theta.iter_mut().zip(state.theta.iter().zip(speeds.iter())) {
                    *th = (th0 + s * dt).max(T::zero()).min(max);
                }
                Ok((next, stats))
            }
            Err(f) => Err(IntegrationFailure {
                reason: f.reason,
                last_good: ReactorState::from_vector(&f.y, t0 + f.t),
            }),
        }
    }
}
