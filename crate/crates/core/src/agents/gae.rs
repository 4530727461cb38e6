//! Generalized advantage estimation.

use crate::{Error, Result};

fn check_lengths(rewards: &[f64], values: &[f64], dones: &[bool]) -> Result<()> {
    if values.len() != rewards.len() + 1 || dones.len() != rewards.len() {
        return Err(Error::domain(format!(
            "GAE needs T rewards, T dones and T+1 values; got {}, {} and {}",
            rewards.len(),
            dones.len(),
            values.len()
        )));
    }
    Ok(())
}

/// Advantages and value targets by the backward recursion
/// `Â_t = δ_t + γλ(1 − done_t)Â_{t+1}`.
///
/// `values[T]` bootstraps the state after the last step; `dones[t]` cuts
/// the sum (and the bootstrap) after step `t`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(rewards, values, dones)?;
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        running = delta + gamma * lambda * live * running;
        advantages[t] = running;
    }
    let targets = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, targets))
}
