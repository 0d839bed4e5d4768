//! Discrete PID benchmark controller and its gain tuner.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvMode, Observation};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Controller};
use crate::reactor::MAX_DRUM_SPEED;
use crate::scalar::Scalar;

/// Bound on the integral accumulator (SPU·s).
pub const INTEGRAL_LIMIT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains<T> {
    pub kp: T,
    pub ki: T,
    pub kd: T,
}

impl<T: Scalar> PidGains<T> {
    pub fn new(kp: T, ki: T, kd: T) -> Self {
        Self { kp, ki, kd }
    }

    /// The hand-tuned reference gains (0.078, 0, 0.3).
    pub fn reference() -> Self {
        Self::new(T::lit(0.078), T::zero(), T::lit(0.3))
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !v.is_finite() {
                return Err(Error::param(k, format!("must be finite, got {v}")));
            }
        }
        Ok(())
    }

    fn as_array(&self) -> [T; 3] {
        [self.kp, self.ki, self.kd]
    }

    fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState<T> {
    pub integral: T,
    pub prev_error: T,
    pub initialized: bool,
}

/// One control update at a 1 s interval.
///
/// `e = setpoint - measured`; the first call treats the derivative as zero.
pub fn pid_step<T: Scalar>(gains: &PidGains<T>, setpoint: T, measured: T, state: &mut PidState<T>) -> T {
    let dt = T::one();
    let e = setpoint - measured;
    let limit = T::lit(INTEGRAL_LIMIT);
    state.integral = (state.integral + e * dt).max(-limit).min(limit);
    let de = if state.initialized { (e - state.prev_error) / dt } else { T::zero() };
    state.prev_error = e;
    state.initialized = true;
    let u = gains.kp * e + gains.ki * state.integral + gains.kd * de;
    let max = T::lit(MAX_DRUM_SPEED);
    if u.is_nan() {
        T::zero()
    } else {
        u.max(-max).min(max)
    }
}

/// PID acting on the single-action (broadcast) environment.
#[derive(Debug, Clone)]
pub struct PidController {
    pub gains: PidGains<f64>,
    state: PidState<f64>,
}

impl PidController {
    pub fn new(gains: PidGains<f64>) -> Self {
        Self {
            gains,
            state: PidState::default(),
        }
    }
}

impl Controller for PidController {
    fn mode(&self) -> EnvMode {
        EnvMode::SingleAction
    }

    fn reset(&mut self) {
        self.state = PidState::default();
    }

    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(vec![pid_step(&self.gains, obs.p_star_next, obs.p_t, &mut self.state)])
    }
}

/// Gains file contents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainsFile {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub train_cae: f64,
}

impl GainsFile {
    pub fn gains(&self) -> PidGains<f64> {
        PidGains::new(self.kp, self.ki, self.kd)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let g: GainsFile = serde_json::from_str(&text)?;
        g.gains().validate()?;
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneConfig {
    /// Lower and upper bound per gain (kp, ki, kd).
    pub bounds: [(f64, f64); 3],
    pub population: usize,
    pub generations: usize,
    /// Hard cap on objective evaluations, polish included.
    pub max_evaluations: usize,
    /// Differential weight is drawn uniformly from this range per generation.
    pub mutation: (f64, f64),
    pub crossover: f64,
    /// Stop when the population's objective spread falls below
    /// `tol * |mean|`.
    pub tol: f64,
    pub polish: bool,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            bounds: [(0.0, 1.0); 3],
            population: 20,
            generations: 200,
            max_evaluations: 20 * 201 + 400,
            mutation: (0.5, 1.0),
            crossover: 0.7,
            tol: 0.01,
            polish: true,
            seed: 0,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        for (i, (lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(format!("bound {i} is not an ordered finite pair: ({lo}, {hi})")));
            }
        }
        if self.population < 4 {
            return Err(Error::config("population must be at least 4"));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return Err(Error::config("crossover must lie in [0, 1]"));
        }
        if !(self.mutation.0 > 0.0 && self.mutation.0 <= self.mutation.1 && self.mutation.1 <= 2.0) {
            return Err(Error::config("mutation range must satisfy 0 < lo <= hi <= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult {
    pub gains: PidGains<f64>,
    /// Train-profile CAE at the returned gains.
    pub train_cae: f64,
    pub evaluations: usize,
    pub generations: usize,
    pub converged: bool,
    /// True when the evaluation cap cut the search short.
    pub budget_exhausted: bool,
}

impl TuneResult {
    pub fn gains_file(&self) -> GainsFile {
        GainsFile {
            kp: self.gains.kp,
            ki: self.gains.ki,
            kd: self.gains.kd,
            train_cae: self.train_cae,
        }
    }
}

/// Penalty added when an episode trips the power limit before the end.
const EARLY_STOP_PENALTY: f64 = 1e5;

/// CAE of a PID episode on `env` (evaluation mode), with a penalty for
/// early termination so that infeasible gains rank last.
pub fn pid_objective(env: &EnvConfig, gains: &PidGains<f64>) -> f64 {
    let mut ctrl = PidController::new(*gains);
    match evaluate(env, &mut ctrl) {
        Ok(rec) if !rec.terminated_early => rec.metrics.cae,
        Ok(rec) => {
            let remaining = env.profile.steps().saturating_sub(rec.metrics.episode_length);
            EARLY_STOP_PENALTY + rec.metrics.cae + 100.0 * remaining as f64
        }
        Err(_) => f64::INFINITY,
    }
}

/// Differential evolution (rand/1/bin) followed by a bounded pattern
/// search, minimizing `objective` over the box in `cfg.bounds`.
pub fn minimize_de<F>(objective: F, cfg: &TuneConfig) -> Result<([f64; 3], f64, usize, usize, bool, bool)>
where
    F: Fn(&[f64; 3]) -> f64 + Sync,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let np = cfg.population;
    let lo = cfg.bounds.map(|b| b.0);
    let hi = cfg.bounds.map(|b| b.1);
    let clip = |x: [f64; 3]| -> [f64; 3] { std::array::from_fn(|j| x[j].max(lo[j]).min(hi[j])) };
    let mut evals = 0usize;

    // Latin hypercube start
    let mut pop = vec![[0.0; 3]; np];
    for j in 0..3 {
        let mut strata: Vec<usize> = (0..np).collect();
        for i in (1..np).rev() {
            strata.swap(i, rng.gen_range(0..=i));
        }
        for (i, x) in pop.iter_mut().enumerate() {
            let u = (strata[i] as f64 + rng.gen::<f64>()) / np as f64;
            x[j] = lo[j] + u * (hi[j] - lo[j]);
        }
    }
    let mut energy: Vec<f64> = pop.par_iter().map(&objective).collect();
    evals += np;

    let mut converged = false;
    let mut budget_exhausted = false;
    let mut gens = 0;
    while gens < cfg.generations {
        if evals + np > cfg.max_evaluations {
            budget_exhausted = true;
            break;
        }
        let f = rng.gen_range(cfg.mutation.0..=cfg.mutation.1);
        let trials: Vec<[f64; 3]> = (0..np)
            .map(|i| {
                let mut pick = || loop {
                    let k = rng.gen_range(0..np);
                    if k != i {
                        break k;
                    }
                };
                let (a, mut b, mut c) = (pick(), pick(), pick());
                while b == a {
                    b = pick();
                }
                while c == a || c == b {
                    c = pick();
                }
                let forced = rng.gen_range(0..3);
                let mut t = pop[i];
                for j in 0..3 {
                    if j == forced || rng.gen::<f64>() < cfg.crossover {
                        t[j] = pop[a][j] + f * (pop[b][j] - pop[c][j]);
                    }
                }
                clip(t)
            })
            .collect();
        let trial_energy: Vec<f64> = trials.par_iter().map(&objective).collect();
        evals += np;
        for i in 0..np {
            if trial_energy[i] <= energy[i] {
                pop[i] = trials[i];
                energy[i] = trial_energy[i];
            }
        }
        gens += 1;

        let finite: Vec<f64> = energy.iter().copied().filter(|e| e.is_finite()).collect();
        if finite.len() == np {
            let mean = finite.iter().sum::<f64>() / np as f64;
            let sd = (finite.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / np as f64).sqrt();
            if sd <= cfg.tol * mean.abs() {
                converged = true;
                break;
            }
        }
    }

    let best_i = (0..np)
        .min_by(|&a, &b| energy[a].total_cmp(&energy[b]))
        .unwrap_or(0);
    let mut best = pop[best_i];
    let mut best_e = energy[best_i];

    if cfg.polish {
        // compass search, shrinking the step whenever no move improves
        let mut step: [f64; 3] = std::array::from_fn(|j| 0.05 * (hi[j] - lo[j]));
        let min_step = 1e-6;
        while step.iter().any(|&s| s > min_step) {
            if evals + 6 > cfg.max_evaluations {
                budget_exhausted = true;
                break;
            }
            let candidates: Vec<[f64; 3]> = (0..3)
                .flat_map(|j| {
                    [-1.0, 1.0].map(|sign| {
                        let mut x = best;
                        x[j] += sign * step[j];
                        clip(x)
                    })
                })
                .filter(|x| *x != best)
                .collect();
            let es: Vec<f64> = candidates.par_iter().map(&objective).collect();
            evals += candidates.len();
            match (0..candidates.len()).min_by(|&a, &b| es[a].total_cmp(&es[b])) {
                Some(k) if es[k] < best_e => {
                    best = candidates[k];
                    best_e = es[k];
                }
                _ => step = step.map(|s| s * 0.5),
            }
        }
    }
    Ok((best, best_e, evals, gens, converged, budget_exhausted))
}

/// Tunes gains minimizing CAE on `env` (usually the noiseless train
/// profile in single-action evaluation mode).
pub fn tune_pid(env: &EnvConfig, cfg: &TuneConfig) -> Result<TuneResult> {
    let mut env = env.clone();
    env.mode = EnvMode::SingleAction;
    env.training = false;
    env.validate()?;
    let (x, e, evaluations, generations, converged, budget_exhausted) =
        minimize_de(|x| pid_objective(&env, &PidGains::from_array(*x)), cfg)?;
    if budget_exhausted {
        log::warn!("PID tuning stopped at the evaluation budget ({evaluations}); returning the best gains found");
    }
    let gains = PidGains::from_array(x);
    debug_assert_eq!(gains.as_array(), x);
    Ok(TuneResult {
        gains,
        train_cae: e,
        evaluations,
        generations,
        converged,
        budget_exhausted,
    })
}
