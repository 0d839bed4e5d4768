//! Vectorized experience streams for the trainer.

use rayon::prelude::*;

use crate::env::{EnvConfig, EnvMode, ReactorEnv};
use crate::error::{Error, Result};

/// Summary of an episode that just finished in one stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub length: usize,
    pub total_reward: f64,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamStep {
    /// Next observation features (already reset if the episode ended).
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// Features of the last state of a truncated episode, for bootstrapping.
    pub final_obs: Option<Vec<f64>>,
    pub episode: Option<EpisodeSummary>,
}

/// A set of experience streams stepped in lockstep with auto-reset.
pub trait VecEnv {
    fn num_streams(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    /// Simulator steps advanced per call to [`VecEnv::step`].
    fn sim_steps_per_step(&self) -> usize;
    fn reset(&mut self) -> Result<Vec<Vec<f64>>>;
    fn step(&mut self, actions: &[Vec<f64>]) -> Result<Vec<StreamStep>>;
}

#[derive(Debug, Clone)]
struct Slot {
    env: ReactorEnv,
    length: usize,
    total_reward: f64,
}

/// `n` independent environments, one stream each, stepped in parallel.
#[derive(Debug, Clone)]
pub struct EnvPool {
    slots: Vec<Slot>,
    obs_dim: usize,
    act_dim: usize,
}

impl EnvPool {
    /// Environment `i` gets seed `config.seed + i`.
    pub fn new(config: &EnvConfig, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("need at least one environment"));
        }
        if config.mode == EnvMode::MarlView {
            return Err(Error::config("per-drum view environments go through the multi-agent adapter"));
        }
        let slots = (0..n)
            .map(|i| {
                let cfg = config.clone().with_seed(config.seed.wrapping_add(i as u64));
                Ok(Slot {
                    env: ReactorEnv::new(cfg)?,
                    length: 0,
                    total_reward: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            slots,
            obs_dim: 3 + config.mode.theta_dim(),
            act_dim: config.mode.action_dim(),
        })
    }

    pub fn envs(&self) -> impl Iterator<Item = &ReactorEnv> {
        self.slots.iter().map(|s| &s.env)
    }
}

impl VecEnv for EnvPool {
    fn num_streams(&self) -> usize {
        self.slots.len()
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn act_dim(&self) -> usize {
        self.act_dim
    }

    fn sim_steps_per_step(&self) -> usize {
        self.slots.len()
    }

    fn reset(&mut self) -> Result<Vec<Vec<f64>>> {
        self.slots
            .iter_mut()
            .map(|s| {
                s.length = 0;
                s.total_reward = 0.0;
                Ok(s.env.reset()?.features())
            })
            .collect()
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<Vec<StreamStep>> {
        if actions.len() != self.slots.len() {
            return Err(Error::usage(format!("expected {} actions, got {}", self.slots.len(), actions.len())));
        }
        self.slots
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(slot, action)| {
                let out = slot.env.step(action)?;
                slot.length += 1;
                slot.total_reward += out.reward;
                let mut step = StreamStep {
                    obs: out.obs.features(),
                    reward: out.reward,
                    terminated: out.terminated,
                    truncated: out.truncated,
                    final_obs: None,
                    episode: None,
                };
                if out.done() {
                    if out.truncated {
                        step.final_obs = Some(step.obs.clone());
                    }
                    step.episode = Some(EpisodeSummary {
                        length: slot.length,
                        total_reward: slot.total_reward,
                        terminated: out.terminated,
                    });
                    slot.length = 0;
                    slot.total_reward = 0.0;
                    step.obs = slot.env.reset()?.features();
                }
                Ok(step)
            })
            .collect()
    }
}
