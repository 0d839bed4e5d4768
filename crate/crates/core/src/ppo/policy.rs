//! Gaussian actor-critic policy and the clipped PPO loss.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache};
use crate::error::{Error, Result};
use crate::reactor::MAX_DRUM_SPEED;
use crate::scalar::Scalar;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput<T> {
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
    pub value: T,
}

/// Separate actor and critic MLPs plus a state-independent log-std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy<T> {
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
    pub log_std: Vec<T>,
}

impl<T: Scalar> Policy<T> {
    /// Orthogonal init: hidden gain sqrt(2), actor head 0.01, critic head 1.
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], log_std_init: f64, rng: &mut R) -> Self {
        let sizes = |out: usize| {
            let mut s = vec![obs_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let actor = Mlp::orthogonal(&sizes(act_dim), 2f64.sqrt(), 0.01, rng);
        let critic = Mlp::orthogonal(&sizes(1), 2f64.sqrt(), 1.0, rng);
        Self {
            actor,
            critic,
            log_std: vec![T::lit(log_std_init); act_dim],
        }
    }

    pub fn zeros(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Self {
        let sizes = |out: usize| {
            let mut s = vec![obs_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        Self {
            actor: Mlp::zeros(&sizes(act_dim)),
            critic: Mlp::zeros(&sizes(1)),
            log_std: vec![T::zero(); act_dim],
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.critic.num_params() + self.log_std.len()
    }

    /// Actor, critic and log-std parameters concatenated.
    pub fn flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.actor.params());
        v.extend_from_slice(self.critic.params());
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_params());
        let na = self.actor.num_params();
        let nc = self.critic.num_params();
        self.actor.params_mut().copy_from_slice(&flat[..na]);
        self.critic.params_mut().copy_from_slice(&flat[na..na + nc]);
        self.log_std.copy_from_slice(&flat[na + nc..]);
    }

    pub fn is_finite(&self) -> bool {
        self.actor.params().iter().chain(self.critic.params()).chain(&self.log_std).all(|p| p.is_finite())
    }

    fn check_obs(&self, obs: &[T]) -> Result<()> {
        if obs.len() != self.obs_dim() {
            return Err(Error::usage(format!("observation has {} entries, policy expects {}", obs.len(), self.obs_dim())));
        }
        Ok(())
    }

    pub fn forward(&self, obs: &[T]) -> Result<PolicyOutput<T>> {
        self.check_obs(obs)?;
        if !self.is_finite() {
            return Err(Error::Training("policy has non-finite weights".into()));
        }
        Ok(PolicyOutput {
            mean: self.actor.forward(obs),
            log_std: self.log_std.clone(),
            value: self.critic.forward(obs)[0],
        })
    }

    pub fn value(&self, obs: &[T]) -> Result<T> {
        self.check_obs(obs)?;
        Ok(self.critic.forward(obs)[0])
    }

    /// Clamped action mean.
    pub fn act_deterministic(&self, obs: &[T]) -> Result<Vec<T>> {
        self.check_obs(obs)?;
        Ok(self.actor.forward(obs).into_iter().map(clamp_action).collect())
    }

    /// Draws an unclamped action; returns it with its log-probability and
    /// the value estimate.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[T], rng: &mut R) -> Result<(Vec<T>, T, T)> {
        let out = self.forward(obs)?;
        let action: Vec<T> = out
            .mean
            .iter()
            .zip(&out.log_std)
            .map(|(&m, &ls)| m + ls.exp() * T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let lp = gaussian_log_prob(&out.mean, &out.log_std, &action);
        Ok((action, lp, out.value))
    }

    /// Entropy of the diagonal Gaussian.
    pub fn entropy(&self) -> T {
        gaussian_entropy(&self.log_std)
    }
}

/// Clamps to the drum speed limit; NaN becomes 0.
pub fn clamp_action<T: Scalar>(a: T) -> T {
    let max = T::lit(MAX_DRUM_SPEED);
    if a.is_nan() {
        T::zero()
    } else {
        a.max(-max).min(max)
    }
}

pub fn gaussian_log_prob<T: Scalar>(mean: &[T], log_std: &[T], x: &[T]) -> T {
    let half = T::lit(0.5);
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((&m, &ls), &xi)| {
            let z = (xi - m) / ls.exp();
            -half * z * z - ls - half * T::lit(LN_2PI)
        })
        .sum()
}

pub fn gaussian_entropy<T: Scalar>(log_std: &[T]) -> T {
    let c = T::lit(0.5 * (LN_2PI + 1.0));
    log_std.iter().map(|&ls| ls + c).sum()
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate<T: Scalar>(ratio: T, advantage: T, clip: T) -> T {
    let clipped = ratio.max(T::one() - clip).min(T::one() + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights<T> {
    pub policy: T,
    pub value: T,
    pub entropy: T,
}

/// Flattened training samples.
#[derive(Debug, Clone, Default)]
pub struct Batch<T> {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<T>,
    pub actions: Vec<T>,
    pub log_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn push(&mut self, obs: &[T], action: &[T], log_prob: T, advantage: T, ret: T) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        debug_assert_eq!(action.len(), self.act_dim);
        self.obs.extend_from_slice(obs);
        self.actions.extend_from_slice(action);
        self.log_probs.push(log_prob);
        self.advantages.push(advantage);
        self.returns.push(ret);
    }

    pub fn obs(&self, i: usize) -> &[T] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn action(&self, i: usize) -> &[T] {
        &self.actions[i * self.act_dim..(i + 1) * self.act_dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts<T> {
    /// Negated mean clipped surrogate.
    pub policy: T,
    /// Mean squared value error.
    pub value: T,
    pub entropy: T,
    pub total: T,
    pub approx_kl: T,
    pub clip_fraction: T,
}

/// Advantages of the selected samples normalized to zero mean and unit
/// (sample) standard deviation.
pub fn normalized_advantages<T: Scalar>(adv: &[T], idx: &[usize]) -> Vec<T> {
    let raw: Vec<T> = idx.iter().map(|&i| adv[i]).collect();
    if raw.len() < 2 {
        return raw;
    }
    let n = T::lit(raw.len() as f64);
    let mean = raw.iter().copied().sum::<T>() / n;
    let var = raw.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / (n - T::one());
    let sd = var.sqrt() + T::lit(1e-8);
    raw.iter().map(|&a| (a - mean) / sd).collect()
}

/// PPO loss on the samples `idx` of `batch` and its gradient with respect
/// to [`Policy::flat`].
///
/// `total = policy_w * (-surrogate) + value_w * mse - entropy_w * entropy`.
pub fn loss_and_grad<T: Scalar>(
    policy: &Policy<T>,
    batch: &Batch<T>,
    idx: &[usize],
    clip: T,
    w: &LossWeights<T>,
) -> (LossParts<T>, Vec<T>) {
    let na = policy.actor.num_params();
    let nc = policy.critic.num_params();
    let mut grad = vec![T::zero(); policy.num_params()];
    let (ga, rest) = grad.split_at_mut(na);
    let (gc, gl) = rest.split_at_mut(nc);

    let adv = normalized_advantages(&batch.advantages, idx);
    let n = T::lit(idx.len() as f64);
    let inv_std: Vec<T> = policy.log_std.iter().map(|ls| (-*ls).exp()).collect();
    let mut parts = LossParts::default();
    let mut cache = MlpCache::default();
    let mut clipped = 0usize;

    for (k, &i) in idx.iter().enumerate() {
        let obs = batch.obs(i);
        let action = batch.action(i);

        let mean = policy.actor.forward_cached(obs, &mut cache);
        let lp = gaussian_log_prob(&mean, &policy.log_std, action);
        let log_ratio = lp - batch.log_probs[i];
        let ratio = log_ratio.exp();
        let a = adv[k];
        let surr = clipped_surrogate(ratio, a, clip);
        parts.policy -= surr / n;
        parts.approx_kl += ((ratio - T::one()) - log_ratio) / n;
        if (ratio - T::one()).abs() > clip {
            clipped += 1;
        }
        // gradient flows only through the unclipped branch
        if ratio * a <= surr {
            let d_lp = -w.policy * ratio * a / n;
            let mut d_mean = vec![T::zero(); mean.len()];
            for d in 0..mean.len() {
                let z = (action[d] - mean[d]) * inv_std[d];
                d_mean[d] = d_lp * z * inv_std[d];
                gl[d] += d_lp * (z * z - T::one());
            }
            policy.actor.backward(&cache, &d_mean, ga);
        }

        let v = policy.critic.forward_cached(obs, &mut cache)[0];
        let err = v - batch.returns[i];
        parts.value += err * err / n;
        let d_v = w.value * T::lit(2.0) * err / n;
        policy.critic.backward(&cache, &[d_v], gc);
    }

    parts.entropy = policy.entropy();
    for g in gl.iter_mut() {
        *g -= w.entropy;
    }
    parts.total = w.policy * parts.policy + w.value * parts.value - w.entropy * parts.entropy;
    parts.clip_fraction = T::lit(clipped as f64) / n;
    (parts, grad)
}
