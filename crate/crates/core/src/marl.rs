//! Shared-policy multi-agent harness: each drum is an agent.
//!
//! One simulator presents eight per-drum experience streams to the PPO
//! trainer. Every agent samples from the same policy, the eight speeds are
//! applied together in one simulator step, and all agents receive the same
//! reward and episode boundaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{marl_merge, marl_split, EnvConfig, EnvMode, Observation, ReactorEnv};
use crate::error::{Error, Result};
use crate::eval::Controller;
use crate::ppo::{train, CurvePoint, EpisodeSummary, Policy, PpoConfig, StreamStep, TrainOutput, VecEnv};
use crate::reactor::NUM_DRUMS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MarlOptions {
    /// Append the mean angle of the other drums to each agent's view.
    pub mean_angle: bool,
}

impl MarlOptions {
    pub fn obs_dim(&self) -> usize {
        if self.mean_angle {
            5
        } else {
            4
        }
    }
}

/// Network input of agent `drum`.
pub fn agent_features(obs: &Observation, drum: usize, opts: &MarlOptions) -> Result<Vec<f64>> {
    let parts = marl_split(obs)?;
    let own = parts
        .get(drum)
        .ok_or_else(|| Error::usage(format!("drum index {drum} out of range")))?;
    let mut f = own.features();
    if opts.mean_angle {
        let others: f64 = obs
            .theta_view
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != drum)
            .map(|(_, th)| th)
            .sum();
        f.push(others / (NUM_DRUMS - 1) as f64 / 180.0);
    }
    Ok(f)
}

fn all_features(obs: &Observation, opts: &MarlOptions) -> Result<Vec<Vec<f64>>> {
    (0..NUM_DRUMS).map(|d| agent_features(obs, d, opts)).collect()
}

#[derive(Debug, Clone)]
struct Sim {
    env: ReactorEnv,
    length: usize,
    total_reward: f64,
}

/// `n` per-drum-view simulators exposed as `8 n` agent streams; stream
/// `8 e + d` is drum `d` of simulator `e`.
#[derive(Debug, Clone)]
pub struct MarlPool {
    sims: Vec<Sim>,
    opts: MarlOptions,
}

impl MarlPool {
    /// Simulator `e` gets seed `config.seed + e`.
    pub fn new(config: &EnvConfig, n: usize, opts: MarlOptions) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("need at least one environment"));
        }
        if config.mode != EnvMode::MarlView {
            return Err(Error::config("multi-agent training needs the per-drum view mode"));
        }
        let sims = (0..n)
            .map(|e| {
                Ok(Sim {
                    env: ReactorEnv::new(config.clone().with_seed(config.seed.wrapping_add(e as u64)))?,
                    length: 0,
                    total_reward: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sims, opts })
    }

    pub fn num_sims(&self) -> usize {
        self.sims.len()
    }

    pub fn sim(&self, e: usize) -> &ReactorEnv {
        &self.sims[e].env
    }
}

impl VecEnv for MarlPool {
    fn num_streams(&self) -> usize {
        self.sims.len() * NUM_DRUMS
    }

    fn obs_dim(&self) -> usize {
        self.opts.obs_dim()
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn sim_steps_per_step(&self) -> usize {
        self.sims.len()
    }

    fn reset(&mut self) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.num_streams());
        for s in &mut self.sims {
            s.length = 0;
            s.total_reward = 0.0;
            out.extend(all_features(&s.env.reset()?, &self.opts)?);
        }
        Ok(out)
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<Vec<StreamStep>> {
        if actions.len() != self.num_streams() || actions.iter().any(|a| a.len() != 1) {
            return Err(Error::usage(format!(
                "expected {} single-drum actions, got {}",
                self.num_streams(),
                actions.len()
            )));
        }
        let opts = self.opts;
        let per_sim: Vec<Vec<StreamStep>> = self
            .sims
            .par_iter_mut()
            .zip(actions.par_chunks(NUM_DRUMS))
            .map(|(sim, acts)| {
                let joint: Vec<f64> = acts.iter().map(|a| a[0]).collect();
                let out = sim.env.step(&marl_merge(&joint)?)?;
                sim.length += 1;
                sim.total_reward += out.reward;
                let done = out.done();
                let episode = done.then_some(EpisodeSummary {
                    length: sim.length,
                    total_reward: sim.total_reward,
                    terminated: out.terminated,
                });
                let final_feats = all_features(&out.obs, &opts)?;
                let next_feats = if done {
                    sim.length = 0;
                    sim.total_reward = 0.0;
                    all_features(&sim.env.reset()?, &opts)?
                } else {
                    final_feats.clone()
                };
                Ok(next_feats
                    .into_iter()
                    .zip(final_feats)
                    .map(|(obs, fin)| StreamStep {
                        obs,
                        reward: out.reward,
                        terminated: out.terminated,
                        truncated: out.truncated,
                        final_obs: out.truncated.then_some(fin),
                        episode,
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(per_sim.into_iter().flatten().collect())
    }
}

/// Trains the shared per-drum policy; `ppo.n_envs` simulators are used and
/// `ppo.total_timesteps` counts agent timesteps (eight per simulator step).
pub fn train_marl(
    env: &EnvConfig,
    ppo: &PpoConfig,
    opts: MarlOptions,
    on_best: impl FnMut(&Policy<f64>, &CurvePoint) -> Result<()>,
) -> Result<TrainOutput> {
    let mut cfg = env.clone();
    cfg.mode = EnvMode::MarlView;
    cfg.training = true;
    cfg.symmetry_penalty_k = 0.0;
    let mut pool = MarlPool::new(&cfg, ppo.n_envs, opts)?;
    train(&mut pool, ppo, on_best)
}

/// Simulator steps implied by an agent-timestep budget.
pub fn sim_steps_for(agent_timesteps: u64) -> u64 {
    agent_timesteps / NUM_DRUMS as u64
}

/// Deterministic deployment: each drum queries the shared policy with its
/// own view.
#[derive(Debug, Clone)]
pub struct MarlController {
    pub policy: Policy<f64>,
    pub opts: MarlOptions,
}

impl MarlController {
    pub fn new(policy: Policy<f64>, opts: MarlOptions) -> Result<Self> {
        if policy.obs_dim() != opts.obs_dim() || policy.act_dim() != 1 {
            return Err(Error::config(format!(
                "policy shape {}x{} is not a per-drum policy ({}x1)",
                policy.obs_dim(),
                policy.act_dim(),
                opts.obs_dim()
            )));
        }
        Ok(Self { policy, opts })
    }
}

impl Controller for MarlController {
    fn mode(&self) -> EnvMode {
        EnvMode::MarlView
    }

    fn reset(&mut self) {}

    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>> {
        all_features(obs, &self.opts)?
            .iter()
            .map(|f| Ok(self.policy.act_deterministic(f)?[0]))
            .collect()
    }
}
