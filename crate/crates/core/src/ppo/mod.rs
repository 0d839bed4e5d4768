//! Proximal policy optimization with separate actor and critic networks.

pub mod adam;
pub mod gae;
pub mod mlp;
pub mod policy;
pub mod train;
pub mod vec_env;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::Adam;
pub use gae::gae;
pub use mlp::Mlp;
pub use policy::{Batch, LossParts, LossWeights, Policy};
pub use train::{ppo_update, train, write_curve, CurvePoint, Schedule, TrainOutput, UpdateStats};
pub use vec_env::{EnvPool, EpisodeSummary, StreamStep, VecEnv};

use crate::env::{EnvConfig, EnvMode, Observation};
use crate::error::{Error, Result};
use crate::eval::Controller;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub n_envs: usize,
    /// Steps per stream between updates.
    pub n_steps: usize,
    /// Minibatch size.
    pub batch_size: usize,
    pub n_epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    /// Value loss weight.
    pub vf_coef: f64,
    /// Entropy bonus weight.
    pub ent_coef: f64,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub max_grad_norm: f64,
    /// Apply `max_grad_norm` to the actor (with log-std) and the critic
    /// separately instead of to all parameters jointly.
    #[serde(default)]
    pub clip_per_network: bool,
    pub total_timesteps: u64,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            n_envs: 10,
            n_steps: 2048,
            batch_size: 64,
            n_epochs: 10,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.0,
            learning_rate: 3e-4,
            adam_eps: 1e-5,
            max_grad_norm: 0.5,
            clip_per_network: false,
            total_timesteps: 200_000,
            hidden: vec![64, 64],
            log_std_init: 0.0,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.n_envs == 0 || self.n_steps == 0 || self.batch_size == 0 || self.n_epochs == 0 {
            return bad("n_envs, n_steps, batch_size and n_epochs must be positive");
        }
        if !(self.n_envs * self.n_steps).is_multiple_of(self.batch_size) {
            return Err(Error::config(format!(
                "n_envs * n_steps = {} is not divisible by batch_size {}",
                self.n_envs * self.n_steps,
                self.batch_size
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if !(self.clip_range > 0.0) {
            return bad("clip_range must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("learning_rate, adam_eps and max_grad_norm must be positive");
        }
        if !(self.vf_coef >= 0.0) || !(self.ent_coef >= 0.0) {
            return bad("loss coefficients must be non-negative");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if self.total_timesteps == 0 {
            return bad("total_timesteps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// One action broadcast to all drums.
    Single,
    /// Eight independent drum actions.
    Multi,
    /// Eight actions with the k = 1 range penalty.
    Symmetric,
    /// Shared per-drum policy.
    Marl,
}

impl TrainMode {
    pub fn env_mode(self) -> EnvMode {
        match self {
            TrainMode::Single => EnvMode::SingleAction,
            TrainMode::Multi | TrainMode::Symmetric => EnvMode::MultiAction,
            TrainMode::Marl => EnvMode::MarlView,
        }
    }

    pub fn symmetry_penalty(self) -> f64 {
        if self == TrainMode::Symmetric {
            1.0
        } else {
            0.0
        }
    }

    /// Training environment for this mode.
    pub fn configure(self, mut env: EnvConfig) -> EnvConfig {
        env.mode = self.env_mode();
        env.symmetry_penalty_k = self.symmetry_penalty();
        env.training = true;
        env
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "single-rl" => Ok(TrainMode::Single),
            "multi" | "multi-rl" => Ok(TrainMode::Multi),
            "symmetric" | "symmetric-rl" => Ok(TrainMode::Symmetric),
            "marl" => Ok(TrainMode::Marl),
            other => Err(Error::config(format!("unknown training mode `{other}`"))),
        }
    }
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: TrainMode,
    pub config_hash: String,
    pub ppo: PpoConfig,
    /// Whether per-drum observations carry the mean of the other angles.
    #[serde(default)]
    pub marl_mean_angle: bool,
    pub best_mean_reward: f64,
    pub rollout_index: usize,
    pub timesteps: u64,
    pub policy: Policy<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tmp = path.as_ref().with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read(path).map_err(|e| Error::config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_slice(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!("unsupported checkpoint version {}", ck.version)));
        }
        if !ck.policy.is_finite() {
            return Err(Error::config("checkpoint holds non-finite weights"));
        }
        Ok(ck)
    }
}

/// Deterministic deployment of a single- or multi-action policy.
#[derive(Debug, Clone)]
pub struct PolicyController {
    pub policy: Policy<f64>,
    mode: EnvMode,
}

impl PolicyController {
    pub fn new(policy: Policy<f64>, mode: EnvMode) -> Result<Self> {
        if mode == EnvMode::MarlView {
            return Err(Error::usage("per-drum policies deploy through the multi-agent controller"));
        }
        let want = (3 + mode.theta_dim(), mode.action_dim());
        if (policy.obs_dim(), policy.act_dim()) != want {
            return Err(Error::config(format!(
                "policy shape {}x{} does not fit {mode:?} ({}x{})",
                policy.obs_dim(),
                policy.act_dim(),
                want.0,
                want.1
            )));
        }
        Ok(Self { policy, mode })
    }
}

impl Controller for PolicyController {
    fn mode(&self) -> EnvMode {
        self.mode
    }

    fn reset(&mut self) {}

    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>> {
        self.policy.act_deterministic(&obs.features())
    }
}
