//! Tracking metrics over one episode at a 1 s control interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics<T> {
    /// Mean absolute error (SPU).
    pub mae: T,
    /// Cumulative absolute error (SPU·s).
    pub cae: T,
    /// Integrated drum speed magnitude over all drums (deg).
    pub control_effort: T,
    pub episode_length: usize,
}

/// Computes MAE, CAE and control effort.
///
/// `power[t]` and `setpoint[t]` are sampled after step `t`;
/// `actions[t]` holds the per-drum speeds applied during that step
/// (disabled drums contribute zero).
pub fn compute_metrics<T, A>(power: &[T], setpoint: &[T], actions: &[A]) -> Result<EpisodeMetrics<T>>
where
    T: Scalar,
    A: AsRef<[T]>,
{
    if power.is_empty() {
        return Err(Error::domain("empty series"));
    }
    if power.len() != setpoint.len() || power.len() != actions.len() {
        return Err(Error::domain(format!(
            "series lengths differ: power {}, setpoint {}, actions {}",
            power.len(),
            setpoint.len(),
            actions.len()
        )));
    }
    let dt = T::one();
    let cae: T = power.iter().zip(setpoint).map(|(&p, &s)| (p - s).abs() * dt).sum();
    let len = power.len();
    let mae = cae / T::lit(len as f64);
    let control_effort = actions
        .iter()
        .map(|a| a.as_ref().iter().map(|u| u.abs()).sum::<T>() * dt)
        .sum();
    Ok(EpisodeMetrics {
        mae,
        cae,
        control_effort,
        episode_length: len,
    })
}
