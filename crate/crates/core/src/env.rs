//! Episodic control environment around the reactor model.
//!
//! One step is one second of simulated time. Controllers see measured
//! powers (true power plus optional Gaussian noise) and drum angles and
//! command drum speeds; the simulator itself only ever sees true state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{LoadProfile, MAX_SETPOINT};
use crate::reactor::{DrumCommand, ReactorModel, ReactorParams, ReactorState, Tolerance, NUM_DRUMS, THETA_0};

/// Constant per-step bonus of the reward.
pub const REWARD_BONUS: f64 = 2.0;
/// Training episodes end once the tracking error exceeds this (SPU).
pub const TRAINING_ERROR_LIMIT: f64 = 5.0;
pub const CONTROL_INTERVAL: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvMode {
    /// One speed broadcast to every enabled drum; one angle observed.
    SingleAction,
    /// Eight independent speeds; all eight angles observed.
    MultiAction,
    /// Eight speeds applied together, observations split per drum.
    MarlView,
}

impl EnvMode {
    pub fn action_dim(self) -> usize {
        match self {
            EnvMode::SingleAction => 1,
            EnvMode::MultiAction | EnvMode::MarlView => NUM_DRUMS,
        }
    }

    pub fn theta_dim(self) -> usize {
        self.action_dim()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    pub mode: EnvMode,
    /// Enables the 5 SPU error and drum-limit terminations.
    pub training: bool,
    /// Weight of the action-range penalty (multi-action only, 0 disables).
    pub symmetry_penalty_k: f64,
    /// Standard deviation of the power measurement noise (SPU).
    pub noise_sigma: f64,
    /// Zero-based indices of drums frozen at their start angle.
    pub disabled_drums: Vec<usize>,
    pub seed: u64,
    pub profile: LoadProfile,
    pub params: ReactorParams<f64>,
    pub theta_0: f64,
    pub tolerance: Tolerance<f64>,
}

impl EnvConfig {
    pub fn new(mode: EnvMode, profile: LoadProfile) -> Self {
        Self {
            mode,
            training: false,
            symmetry_penalty_k: 0.0,
            noise_sigma: 0.0,
            disabled_drums: Vec::new(),
            seed: 0,
            profile,
            params: ReactorParams::holos_quad(),
            theta_0: THETA_0,
            tolerance: Tolerance::default(),
        }
    }

    pub fn training(mut self, on: bool) -> Self {
        self.training = on;
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_symmetry_penalty(mut self, k: f64) -> Self {
        self.symmetry_penalty_k = k;
        self
    }

    pub fn with_disabled(mut self, drums: &[usize]) -> Self {
        self.disabled_drums = drums.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.symmetry_penalty_k >= 0.0) || !self.symmetry_penalty_k.is_finite() {
            return Err(Error::config("symmetry_penalty_k must be >= 0"));
        }
        if self.symmetry_penalty_k > 0.0 && self.mode != EnvMode::MultiAction {
            return Err(Error::config("symmetry_penalty_k applies to multi-action mode only"));
        }
        if let Some(&d) = self.disabled_drums.iter().find(|&&d| d >= NUM_DRUMS) {
            return Err(Error::config(format!("disabled drum index {d} out of range 0..{NUM_DRUMS}")));
        }
        if self.mask().iter().all(|&m| !m) {
            return Err(Error::config("at least one drum must stay enabled"));
        }
        self.params.validate()
    }

    pub fn mask(&self) -> [bool; NUM_DRUMS] {
        let mut mask = [true; NUM_DRUMS];
        for &d in &self.disabled_drums {
            if d < NUM_DRUMS {
                mask[d] = false;
            }
        }
        mask
    }
}

/// What a controller sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Current measured power (SPU).
    pub p_t: f64,
    /// Setpoint for the end of the coming step (SPU).
    pub p_star_next: f64,
    /// Previous measured power (SPU).
    pub p_prev: f64,
    /// Drum angle(s) in degrees.
    pub theta_view: Vec<f64>,
}

impl Observation {
    /// Network input: powers / 100, angles / 180.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(3 + self.theta_view.len());
        f.push(self.p_t / 100.0);
        f.push(self.p_star_next / 100.0);
        f.push(self.p_prev / 100.0);
        f.extend(self.theta_view.iter().map(|th| th / 180.0));
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub time: f64,
    pub true_power: f64,
    pub measured_power: f64,
    pub setpoint: f64,
    pub temperatures: [f64; 3],
    pub conc_i: f64,
    pub conc_x: f64,
    pub xenon_reactivity_pcm: f64,
    pub theta: [f64; NUM_DRUMS],
    /// Speeds actually applied to each drum (deg/s).
    pub applied: [f64; NUM_DRUMS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma`.
pub fn inject_noise<R: rand::Rng + ?Sized>(true_power: f64, sigma: f64, rng: &mut R) -> Result<f64> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(true_power);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::domain(e.to_string()))?;
    Ok(true_power + normal.sample(rng))
}

/// `max - min` of the speeds applied to enabled drums.
pub fn action_range(applied: &[f64; NUM_DRUMS], mask: &[bool; NUM_DRUMS]) -> f64 {
    let enabled = applied.iter().zip(mask).filter(|(_, &m)| m).map(|(&a, _)| a);
    let (lo, hi) = enabled.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)));
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

/// `2 - |error| - k * range`.
pub fn reward(error: f64, range: f64, k: f64) -> f64 {
    REWARD_BONUS - error.abs() - k * range
}

/// Termination rule applied after each step.
pub fn is_terminal(
    training: bool,
    error: f64,
    true_power: f64,
    theta: &[f64; NUM_DRUMS],
    mask: &[bool; NUM_DRUMS],
) -> bool {
    if true_power > MAX_SETPOINT {
        return true;
    }
    if !training {
        return false;
    }
    let at_limit = theta
        .iter()
        .zip(mask)
        .any(|(&th, &m)| m && (th <= 0.0 || th >= 180.0));
    error.abs() > TRAINING_ERROR_LIMIT || at_limit
}

/// Per-drum observations sharing the global powers.
pub fn marl_split(obs: &Observation) -> Result<Vec<Observation>> {
    if obs.theta_view.len() != NUM_DRUMS {
        return Err(Error::usage(format!(
            "per-drum split needs {NUM_DRUMS} drum angles, got {}",
            obs.theta_view.len()
        )));
    }
    Ok(obs
        .theta_view
        .iter()
        .map(|&th| Observation {
            p_t: obs.p_t,
            p_star_next: obs.p_star_next,
            p_prev: obs.p_prev,
            theta_view: vec![th],
        })
        .collect())
}

/// Collects one speed per drum into a joint command vector.
pub fn marl_merge(actions: &[f64]) -> Result<[f64; NUM_DRUMS]> {
    <[f64; NUM_DRUMS]>::try_from(actions).map_err(|_| {
        Error::usage(format!("expected {NUM_DRUMS} per-drum actions, got {}", actions.len()))
    })
}

#[derive(Debug, Clone)]
pub struct ReactorEnv {
    config: EnvConfig,
    model: ReactorModel<f64>,
    state: ReactorState<f64>,
    mask: [bool; NUM_DRUMS],
    rng: ChaCha8Rng,
    measured: f64,
    prev_measured: f64,
    step_index: usize,
    started: bool,
    done: bool,
}

impl ReactorEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let (model, state) = ReactorModel::at_equilibrium(config.params.clone(), 1.0, config.theta_0)?;
        let mask = config.mask();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            model,
            state,
            mask,
            rng,
            measured: 100.0,
            prev_measured: 100.0,
            step_index: 0,
            started: false,
            done: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn model(&self) -> &ReactorModel<f64> {
        &self.model
    }

    pub fn state(&self) -> &ReactorState<f64> {
        &self.state
    }

    pub fn mask(&self) -> [bool; NUM_DRUMS] {
        self.mask
    }

    pub fn mode(&self) -> EnvMode {
        self.config.mode
    }

    pub fn steps_taken(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Replaces the seed used by subsequent resets.
    pub fn reseed(&mut self, seed: u64) {
        self.config.seed = seed;
    }

    /// Restarts at the full-power equilibrium and reseeds the noise stream.
    pub fn reset(&mut self) -> Result<Observation> {
        self.state = crate::reactor::equilibrium_state(1.0, self.config.theta_0, &self.config.params)?;
        self.rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let measured = inject_noise(self.state.power_spu(), self.config.noise_sigma, &mut self.rng)?;
        self.measured = measured;
        self.prev_measured = measured;
        self.step_index = 0;
        self.started = true;
        self.done = false;
        Ok(self.observation())
    }

    pub fn observation(&self) -> Observation {
        let next_t = (self.step_index + 1) as f64 * CONTROL_INTERVAL;
        Observation {
            p_t: self.measured,
            p_star_next: self.config.profile.setpoint(next_t),
            p_prev: self.prev_measured,
            theta_view: self.theta_view(),
        }
    }

    fn theta_view(&self) -> Vec<f64> {
        match self.config.mode {
            EnvMode::SingleAction => {
                // enabled drums move together; report the first of them
                let i = self.mask.iter().position(|&m| m).unwrap_or(0);
                vec![self.state.theta[i]]
            }
            EnvMode::MultiAction | EnvMode::MarlView => self.state.theta.to_vec(),
        }
    }

    /// Applies one action for one control interval.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if !self.started {
            return Err(Error::usage("step called before reset"));
        }
        if self.done {
            return Err(Error::usage("step called after the episode ended"));
        }
        let speeds = match self.config.mode {
            EnvMode::SingleAction => match action {
                [u] => [*u; NUM_DRUMS],
                _ => {
                    return Err(Error::usage(format!(
                        "single-action mode takes 1 action, got {}",
                        action.len()
                    )))
                }
            },
            EnvMode::MultiAction | EnvMode::MarlView => marl_merge(action)?,
        };
        self.step_speeds(speeds)
    }

    fn step_speeds(&mut self, speeds: [f64; NUM_DRUMS]) -> Result<StepOutcome> {
        let command = DrumCommand::new(speeds, self.mask);
        let applied = command.speeds();
        let next = self
            .model
            .integrate_step(&self.state, &command, CONTROL_INTERVAL, &self.config.tolerance)?;
        self.state = next;
        self.step_index += 1;

        let true_power = next.power_spu();
        let measured = inject_noise(true_power, self.config.noise_sigma, &mut self.rng)?;
        self.prev_measured = self.measured;
        self.measured = measured;

        let time = self.step_index as f64 * CONTROL_INTERVAL;
        let setpoint = self.config.profile.setpoint(time);
        // training rewards the measured power; evaluation scores the truth
        let scored = if self.config.training { measured } else { true_power };
        let error = scored - setpoint;
        let k = match self.config.mode {
            EnvMode::MultiAction => self.config.symmetry_penalty_k,
            _ => 0.0,
        };
        let range = if k > 0.0 { action_range(&applied, &self.mask) } else { 0.0 };
        let r = reward(error, range, k);
        let terminated = is_terminal(self.config.training, error, true_power, &next.theta, &self.mask);
        let truncated = !terminated && self.step_index >= self.config.profile.steps();
        self.done = terminated || truncated;

        let info = StepInfo {
            time,
            true_power,
            measured_power: measured,
            setpoint,
            temperatures: [next.t_f, next.t_m, next.t_c],
            conc_i: next.conc_i,
            conc_x: next.conc_x,
            xenon_reactivity_pcm: self.model.xenon_reactivity_pcm(&next),
            theta: next.theta,
            applied,
        };
        Ok(StepOutcome {
            obs: self.observation(),
            reward: r,
            terminated,
            truncated,
            info,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::builtin;

    fn cfg(mode: EnvMode) -> EnvConfig {
        EnvConfig::new(mode, builtin("train").unwrap())
    }

    #[test]
    fn reset_is_noiseless_equilibrium() {
        let mut env = ReactorEnv::new(cfg(EnvMode::SingleAction)).unwrap();
        let obs = env.reset().unwrap();
        assert_eq!(obs.p_t, 100.0);
        assert_eq!(obs.p_prev, 100.0);
        assert_eq!(obs.p_star_next, env.config().profile.setpoint(1.0));
        assert_eq!(obs.theta_view, vec![90.0]);
        assert_eq!(env.reset().unwrap(), obs);

        let mut multi = ReactorEnv::new(cfg(EnvMode::MultiAction)).unwrap();
        assert_eq!(multi.reset().unwrap().theta_view, vec![90.0; 8]);
    }

    #[test]
    fn seeded_noise_reproduces() {
        let c = cfg(EnvMode::SingleAction).with_noise(2.0).with_seed(17);
        let mut a = ReactorEnv::new(c.clone()).unwrap();
        let mut b = ReactorEnv::new(c).unwrap();
        let oa = a.reset().unwrap();
        assert_ne!(oa.p_t, 100.0);
        assert_eq!(oa, b.reset().unwrap());
        assert_eq!(oa, a.reset().unwrap());
        for _ in 0..5 {
            assert_eq!(a.step(&[0.1]).unwrap(), b.step(&[0.1]).unwrap());
        }
    }

    #[test]
    fn reward_arithmetic() {
        assert_eq!(reward(0.0, 0.0, 0.0), 2.0);
        assert_eq!(reward(5.0, 0.0, 0.0), -3.0);
        assert_eq!(reward(-5.0, 0.0, 0.0), -3.0);
        let mut applied = [0.0; NUM_DRUMS];
        applied[0] = 0.5;
        applied[1] = -0.5;
        let r = action_range(&applied, &[true; NUM_DRUMS]);
        assert_eq!(r, 1.0);
        assert_eq!(reward(0.0, r, 1.0), 1.0);
        let mut mask = [true; NUM_DRUMS];
        mask[1] = false;
        assert_eq!(action_range(&applied, &mask), 0.5);
    }

    #[test]
    fn termination_rules() {
        let theta = [90.0; NUM_DRUMS];
        let mask = [true; NUM_DRUMS];
        assert!(!is_terminal(true, 5.0, 100.0, &theta, &mask));
        assert!(is_terminal(true, 5.0 + 1e-9, 100.0, &theta, &mask));
        assert!(is_terminal(true, -5.5, 100.0, &theta, &mask));
        assert!(!is_terminal(false, 50.0, 100.0, &theta, &mask));
        assert!(is_terminal(false, 0.0, 110.01, &theta, &mask));
        assert!(!is_terminal(false, 0.0, 110.0, &theta, &mask));

        let mut parked = theta;
        parked[4] = 0.0;
        assert!(is_terminal(true, 0.0, 100.0, &parked, &mask));
        assert!(!is_terminal(false, 0.0, 100.0, &parked, &mask));
        let mut m = mask;
        m[4] = false;
        assert!(!is_terminal(true, 0.0, 100.0, &parked, &m));
        parked[4] = 180.0;
        assert!(is_terminal(true, 0.0, 100.0, &parked, &mask));
    }

    #[test]
    fn large_error_terminates_training_episode() {
        let profile = LoadProfile::new("drop", vec![(0.0, 100.0), (1.0, 94.0), (10.0, 94.0)]).unwrap();
        let mut c = EnvConfig::new(EnvMode::SingleAction, profile);
        c.training = true;
        let mut env = ReactorEnv::new(c.clone()).unwrap();
        env.reset().unwrap();
        let out = env.step(&[0.0]).unwrap();
        assert!(out.terminated && !out.truncated);
        assert!((out.reward - (2.0 - 6.0)).abs() < 1e-6);
        assert!(matches!(env.step(&[0.0]), Err(Error::Usage(_))));

        c.training = false;
        let mut eval = ReactorEnv::new(c).unwrap();
        eval.reset().unwrap();
        assert!(!eval.step(&[0.0]).unwrap().terminated);
    }

    #[test]
    fn overpower_always_terminates() {
        let profile = LoadProfile::new("hold", vec![(0.0, 100.0), (300.0, 100.0)]).unwrap();
        let mut env = ReactorEnv::new(EnvConfig::new(EnvMode::SingleAction, profile)).unwrap();
        env.reset().unwrap();
        let mut ended = None;
        for k in 0..300 {
            let out = env.step(&[0.5]).unwrap();
            if out.terminated {
                ended = Some((k, out.info.true_power));
                break;
            }
        }
        let (_, p) = ended.expect("withdrawing drums must trip the 110 SPU limit");
        assert!(p > 110.0);
    }

    #[test]
    fn truncates_at_profile_end() {
        let mut env = ReactorEnv::new(cfg(EnvMode::SingleAction)).unwrap();
        env.reset().unwrap();
        let mut last = None;
        for _ in 0..200 {
            last = Some(env.step(&[0.0]).unwrap());
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.terminated);
        assert_eq!(last.obs.p_star_next, 80.0);
    }

    #[test]
    fn action_arity_is_checked() {
        let mut env = ReactorEnv::new(cfg(EnvMode::MultiAction)).unwrap();
        assert!(matches!(env.step(&[0.0; 8]), Err(Error::Usage(_))));
        env.reset().unwrap();
        assert!(env.step(&[0.0]).is_err());
        let mut single = ReactorEnv::new(cfg(EnvMode::SingleAction)).unwrap();
        single.reset().unwrap();
        assert!(single.step(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn split_and_merge() {
        let obs = Observation {
            p_t: 99.0,
            p_star_next: 98.0,
            p_prev: 100.0,
            theta_view: vec![90.0; 8],
        };
        let parts = marl_split(&obs).unwrap();
        assert_eq!(parts.len(), 8);
        assert!(parts.iter().all(|p| p == &parts[0]));
        assert!(marl_split(&Observation { theta_view: vec![90.0], ..obs }).is_err());
        assert!(marl_merge(&[0.0; 7]).is_err());
        assert_eq!(marl_merge(&[0.1; 8]).unwrap(), [0.1; 8]);
    }

    #[test]
    fn disabled_drum_holds_in_marl_view() {
        let c = cfg(EnvMode::MarlView).with_disabled(&[2]);
        let mut env = ReactorEnv::new(c).unwrap();
        env.reset().unwrap();
        let out = env.step(&[0.3; 8]).unwrap();
        assert_eq!(out.info.theta[2], 90.0);
        assert_eq!(out.info.applied[2], 0.0);
        assert!((out.info.theta[0] - 90.3).abs() < 1e-12);
    }

    #[test]
    fn broadcast_matches_eight_equal_speeds() {
        let mut single = ReactorEnv::new(cfg(EnvMode::SingleAction)).unwrap();
        let mut multi = ReactorEnv::new(cfg(EnvMode::MultiAction)).unwrap();
        single.reset().unwrap();
        multi.reset().unwrap();
        for k in 0..30 {
            let u = 0.05 * ((k as f64) * 0.37).sin();
            let a = single.step(&[u]).unwrap();
            let b = multi.step(&[u; 8]).unwrap();
            assert_eq!(a.info.true_power, b.info.true_power);
            assert_eq!(single.state(), multi.state());
        }
    }

    #[test]
    fn noise_sigma_must_be_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(inject_noise(100.0, -1.0, &mut rng).is_err());
        assert_eq!(inject_noise(100.0, 0.0, &mut rng).unwrap(), 100.0);
        assert!(ReactorEnv::new(cfg(EnvMode::SingleAction).with_noise(-0.1)).is_err());
    }

    #[test]
    fn noise_sample_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws: Vec<f64> = (0..10_000).map(|_| inject_noise(0.0, 2.0, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((1.94..=2.06).contains(&sd), "sample std {sd}");
    }

    #[test]
    fn config_validation() {
        assert!(ReactorEnv::new(cfg(EnvMode::SingleAction).with_symmetry_penalty(1.0)).is_err());
        assert!(ReactorEnv::new(cfg(EnvMode::MultiAction).with_symmetry_penalty(1.0)).is_ok());
        assert!(ReactorEnv::new(cfg(EnvMode::MultiAction).with_disabled(&[8])).is_err());
        assert!(ReactorEnv::new(cfg(EnvMode::MultiAction).with_disabled(&[0, 1, 2, 3, 4, 5, 6, 7])).is_err());
    }
}
