//! Generalized advantage estimation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Advantages and returns for one stream.
///
/// `values` has one more entry than `rewards`: the value of the state after
/// the last step. `dones[t]` marks that the episode ended at step `t`, which
/// cuts both the bootstrap and the recursion.
pub fn gae<T: Scalar>(rewards: &[T], values: &[T], dones: &[bool], gamma: T, lambda: T) -> Result<(Vec<T>, Vec<T>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::domain(format!(
            "gae expects values of len {} and dones of len {n}, got {} and {}",
            n + 1,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![T::zero(); n];
    let mut next = T::zero();
    for t in (0..n).rev() {
        let live = if dones[t] { T::zero() } else { T::one() };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(&a, &v)| a + v).collect();
    Ok((adv, returns))
}
