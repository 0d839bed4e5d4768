//! Rollout collection, PPO updates and best-reward checkpointing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{clip_grad_norm, Adam};
use super::gae::gae;
use super::policy::{clamp_action, loss_and_grad, Batch, LossParts, LossWeights, Policy};
use super::vec_env::VecEnv;
use super::PpoConfig;
use crate::error::{Error, Result};

/// How a timestep budget is cut into rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub streams: usize,
    /// Steps per stream in a full rollout.
    pub n_steps: usize,
    /// Steps per stream in the last rollout (equal to `n_steps` when the
    /// budget divides evenly).
    pub last_steps: usize,
    pub rollouts: usize,
    /// Trainer-visible timesteps actually scheduled.
    pub timesteps: u64,
}

impl Schedule {
    /// Spends `total` timesteps over `streams` streams, `n_steps` per
    /// stream per rollout, with a shorter final rollout for any remainder.
    /// `total` is rounded down to a multiple of `streams`.
    pub fn new(total: u64, streams: usize, n_steps: usize) -> Result<Self> {
        if streams == 0 || n_steps == 0 {
            return Err(Error::config("streams and n_steps must be positive"));
        }
        let per_stream = (total / streams as u64) as usize;
        if per_stream == 0 {
            return Err(Error::config(format!(
                "total timesteps {total} is smaller than the number of streams {streams}"
            )));
        }
        let n = n_steps.min(per_stream);
        let full = per_stream / n;
        let rem = per_stream % n;
        Ok(Self {
            streams,
            n_steps: n,
            last_steps: if rem == 0 { n } else { rem },
            rollouts: full + usize::from(rem > 0),
            timesteps: (per_stream * streams) as u64,
        })
    }

    pub fn steps_in(&self, rollout: usize) -> usize {
        if rollout + 1 == self.rollouts {
            self.last_steps
        } else {
            self.n_steps
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rollout_index: usize,
    /// Mean per-step reward over the rollout.
    pub mean_reward: f64,
    /// Mean length of episodes finished during the rollout, or of the
    /// running episodes when none finished.
    pub mean_episode_length: f64,
    pub timesteps: u64,
}

/// Writes `rollout_index,mean_reward,mean_episode_length`.
pub fn write_curve<W: std::io::Write>(curve: &[CurvePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rollout_index", "mean_reward", "mean_episode_length"])?;
    for p in curve {
        w.write_record([p.rollout_index.to_string(), p.mean_reward.to_string(), p.mean_episode_length.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub loss: LossParts<f64>,
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Runs `epochs` passes of shuffled minibatch updates over `batch`.
///
/// On a non-finite loss or gradient the parameters are restored to their
/// state before the call and a training error is returned.
pub fn ppo_update(
    policy: &mut Policy<f64>,
    opt: &mut Adam,
    batch: &Batch<f64>,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::Training("empty rollout batch".into()));
    }
    let snapshot = policy.clone();
    let opt_snapshot = opt.clone();
    let weights = LossWeights {
        policy: 1.0,
        value: cfg.vf_coef,
        entropy: cfg.ent_coef,
    };
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    let mut flat = policy.flat();
    for _ in 0..cfg.n_epochs {
        idx.shuffle(rng);
        for mb in idx.chunks(cfg.batch_size) {
            let (parts, mut grad) = loss_and_grad(policy, batch, mb, cfg.clip_range, &weights);
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                *policy = snapshot;
                *opt = opt_snapshot;
                return Err(Error::Training(format!("non-finite loss {}", parts.total)));
            }
            let norm = if cfg.clip_per_network {
                let na = policy.actor.num_params();
                let nc = policy.critic.num_params();
                let (actor, rest) = grad.split_at_mut(na);
                let (critic, log_std) = rest.split_at_mut(nc);
                let mut joined: Vec<f64> = actor.iter().chain(log_std.iter()).copied().collect();
                let na_norm = clip_grad_norm(&mut joined, cfg.max_grad_norm);
                actor.copy_from_slice(&joined[..na]);
                log_std.copy_from_slice(&joined[na..]);
                let nc_norm = clip_grad_norm(critic, cfg.max_grad_norm);
                na_norm.hypot(nc_norm)
            } else {
                clip_grad_norm(&mut grad, cfg.max_grad_norm)
            };
            opt.step(&mut flat, &grad);
            policy.set_flat(&flat);
            stats.loss = parts;
            stats.grad_norm = norm;
            stats.minibatches += 1;
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Parameters saved at the best mean rollout reward.
    pub best: Policy<f64>,
    pub last: Policy<f64>,
    pub best_mean_reward: f64,
    pub best_rollout: Option<usize>,
    pub curve: Vec<CurvePoint>,
    pub updates: Vec<UpdateStats>,
    pub schedule: Schedule,
    /// Trainer-visible timesteps collected.
    pub timesteps: u64,
    /// Simulator steps taken.
    pub sim_steps: u64,
    /// Set when training stopped early on a non-finite update.
    pub aborted: Option<String>,
}

/// Buffers of one stream within a rollout.
#[derive(Debug, Clone, Default)]
struct Stream {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
    /// Rewards with the truncation bootstrap folded in.
    rewards: Vec<f64>,
    raw_rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
}

/// Trains a fresh policy on `venv`.
///
/// After each rollout and update, `on_best` is called whenever the
/// rollout's mean reward beats every earlier one, with the updated
/// parameters.
pub fn train<V: VecEnv>(
    venv: &mut V,
    cfg: &PpoConfig,
    mut on_best: impl FnMut(&Policy<f64>, &CurvePoint) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let policy = Policy::new(venv.obs_dim(), venv.act_dim(), &cfg.hidden, cfg.log_std_init, &mut rng);
    train_from(venv, cfg, policy, &mut rng, &mut on_best)
}

fn train_from<V: VecEnv>(
    venv: &mut V,
    cfg: &PpoConfig,
    mut policy: Policy<f64>,
    rng: &mut ChaCha8Rng,
    on_best: &mut impl FnMut(&Policy<f64>, &CurvePoint) -> Result<()>,
) -> Result<TrainOutput> {
    let streams = venv.num_streams();
    let schedule = Schedule::new(cfg.total_timesteps, streams, cfg.n_steps)?;
    let mut opt = Adam::new(policy.num_params(), cfg.learning_rate, cfg.adam_eps);
    let mut obs = venv.reset()?;
    let mut running_len = vec![0usize; streams];

    let mut out = TrainOutput {
        best: policy.clone(),
        last: policy.clone(),
        best_mean_reward: f64::NEG_INFINITY,
        best_rollout: None,
        curve: Vec::with_capacity(schedule.rollouts),
        updates: Vec::with_capacity(schedule.rollouts),
        schedule,
        timesteps: 0,
        sim_steps: 0,
        aborted: None,
    };

    for rollout in 0..schedule.rollouts {
        let steps = schedule.steps_in(rollout);
        let mut bufs = vec![Stream::default(); streams];
        let mut finished_lengths = Vec::new();
        for _ in 0..steps {
            let mut actions = Vec::with_capacity(streams);
            for (s, o) in obs.iter().enumerate() {
                let (raw, lp, v) = policy.sample(o, rng)?;
                actions.push(raw.iter().map(|&a| clamp_action(a)).collect::<Vec<_>>());
                let b = &mut bufs[s];
                b.obs.push(o.clone());
                b.actions.push(raw);
                b.log_probs.push(lp);
                b.values.push(v);
            }
            let results = venv.step(&actions)?;
            if results.len() != streams {
                return Err(Error::Training(format!("environment returned {} streams, expected {streams}", results.len())));
            }
            for (s, r) in results.into_iter().enumerate() {
                let mut reward = r.reward;
                if r.truncated {
                    if let Some(fo) = &r.final_obs {
                        reward += cfg.gamma * policy.value(fo)?;
                    }
                }
                bufs[s].rewards.push(reward);
                bufs[s].raw_rewards.push(r.reward);
                bufs[s].dones.push(r.terminated || r.truncated);
                running_len[s] += 1;
                if let Some(ep) = r.episode {
                    finished_lengths.push(ep.length as f64);
                    running_len[s] = 0;
                }
                obs[s] = r.obs;
            }
            out.timesteps += streams as u64;
            out.sim_steps += venv.sim_steps_per_step() as u64;
        }

        let mut batch = Batch::new(venv.obs_dim(), venv.act_dim());
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        for (s, b) in bufs.iter().enumerate() {
            let mut values = b.values.clone();
            values.push(policy.value(&obs[s])?);
            let (adv, ret) = gae(&b.rewards, &values, &b.dones, cfg.gamma, cfg.gae_lambda)?;
            for t in 0..b.rewards.len() {
                batch.push(&b.obs[t], &b.actions[t], b.log_probs[t], adv[t], ret[t]);
            }
            reward_count += b.raw_rewards.len();
            reward_sum += b.raw_rewards.iter().sum::<f64>();
        }
        let mean_reward = reward_sum / reward_count as f64;
        let mean_episode_length = if finished_lengths.is_empty() {
            running_len.iter().sum::<usize>() as f64 / streams as f64
        } else {
            finished_lengths.iter().sum::<f64>() / finished_lengths.len() as f64
        };

        match ppo_update(&mut policy, &mut opt, &batch, cfg, rng) {
            Ok(stats) => out.updates.push(stats),
            Err(e) => {
                log::error!("rollout {rollout}: {e}; stopping");
                out.aborted = Some(e.to_string());
                break;
            }
        }

        let point = CurvePoint {
            rollout_index: rollout,
            mean_reward,
            mean_episode_length,
            timesteps: out.timesteps,
        };
        log::info!(
            "rollout {}/{}: mean reward {:.4}, mean episode length {:.1}",
            rollout + 1,
            schedule.rollouts,
            mean_reward,
            mean_episode_length
        );
        if mean_reward > out.best_mean_reward {
            out.best_mean_reward = mean_reward;
            out.best_rollout = Some(rollout);
            out.best = policy.clone();
            on_best(&policy, &point)?;
        }
        out.curve.push(point);
    }
    out.last = policy;
    Ok(out)
}
