//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use ewhrl::agents::{actor_loss, critic_loss, Actor, Critic, PpoConfig, Sample};
use ewhrl::env::{time_features, Observation};
use ewhrl::nn::{DenseNet, GradientTape};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// Observation with every tank temperature equal to `temp`.
pub fn observation(temp: f64, t: usize, f_e_pv: f64, pv_ratio: f64) -> Observation {
    let (t_cos, t_sin) = time_features(t);
    Observation {
        mean_temp_history: [temp; 4],
        delta_backup: temp - 45.0,
        f_e_pv,
        pv_ratio,
        t_cos,
        t_sin,
        t,
    }
}

/// A minibatch of deadband observations with normalized-looking advantages.
/// Old log-probs sit close to the current policy so that every sample is on
/// the smooth, unclipped branch of the surrogate.
pub fn smooth_batch<R: Rng>(actor: &Actor, n: usize, rng: &mut R) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let mut obs = observation(
                rng.random_range(45.5..54.5),
                rng.random_range(0..96),
                rng.random_range(0.0..1.2),
                rng.random_range(0.0..1.0),
            );
            obs.mean_temp_history[1] = rng.random_range(44.0..56.0);
            let p = actor.prob(&obs).unwrap();
            let u = rng.random::<bool>();
            let logp_now = if u { p.ln() } else { (1.0 - p).ln() };
            Sample {
                obs,
                u,
                logp: logp_now + rng.random_range(-0.05..0.05),
                forced: false,
                reward: rng.random_range(-1.0..1.0),
                value: rng.random_range(-1.0..1.0),
                done: false,
                advantage: rng.random_range(-2.0..2.0),
                target: rng.random_range(-3.0..3.0),
            }
        })
        .collect()
}

fn tape_vec(t: &GradientTape) -> Vec<f64> {
    t.values().copied().collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `loss` over every parameter of `net`.
pub fn numeric_gradient(net: &DenseNet, loss: impl Fn(&DenseNet) -> f64) -> Vec<f64> {
    let n = net.num_params();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let mut plus = net.clone();
        *plus.params_mut().nth(i).unwrap() += FD_STEP;
        let mut minus = net.clone();
        *minus.params_mut().nth(i).unwrap() -= FD_STEP;
        grad.push((loss(&plus) - loss(&minus)) / (2.0 * FD_STEP));
    }
    grad
}

/// Worst relative gradient error over the actor's networks.
pub fn actor_gradient_error(actor: &Actor, batch: &[Sample], config: &PpoConfig) -> f64 {
    let analytic = actor_loss(actor, batch, config).unwrap();
    let mut worst = 0.0f64;
    for (k, net) in actor.nets().iter().enumerate() {
        let numeric = numeric_gradient(net, |candidate| {
            let mut a = actor.clone();
            a.nets_mut()[k] = candidate.clone();
            actor_loss(&a, batch, config).unwrap().loss
        });
        worst = worst.max(relative_error(&tape_vec(&analytic.grads[k]), &numeric));
    }
    worst
}

pub fn critic_gradient_error(critic: &Critic, batch: &[Sample]) -> f64 {
    let (_, tape) = critic_loss(critic, batch).unwrap();
    let numeric = numeric_gradient(critic.net(), |candidate| {
        let c = Critic::new(candidate.clone()).unwrap();
        critic_loss(&c, batch).unwrap().0
    });
    relative_error(&tape_vec(&tape), &numeric)
}

/// Advantages as the explicit double sum `Σ_l (γλ)^l δ_{t+l}`, stopping after
/// the first episode cut.
pub fn gae_direct(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if dones[t] { 0.0 } else { values[t + 1] };
            rewards[t] + gamma * next - values[t]
        })
        .collect();
    let mut adv = vec![0.0; n];
    for (t, a) in adv.iter_mut().enumerate() {
        let mut weight = 1.0;
        for l in t..n {
            *a += weight * delta[l];
            if dones[l] {
                break;
            }
            weight *= gamma * lambda;
        }
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

const DAYS_IN_MONTH_FROM_OCTOBER: [usize; 12] = [31, 30, 31, 31, 28, 31, 30, 31, 30, 31, 31, 30];

/// Monthly peaks by scanning every quarter once.
pub fn brute_monthly_peaks(net: &[f64]) -> Vec<f64> {
    let mut month_of_day = Vec::with_capacity(365);
    for (m, &days) in DAYS_IN_MONTH_FROM_OCTOBER.iter().enumerate() {
        month_of_day.extend(std::iter::repeat_n(m, days));
    }
    let mut peaks = vec![0.0f64; 12];
    for (q, &p) in net.iter().enumerate() {
        let m = month_of_day[q / 96];
        if p > peaks[m] {
            peaks[m] = p;
        }
    }
    peaks
}

pub fn brute_mmp(net: &[f64]) -> f64 {
    brute_monthly_peaks(net)
        .iter()
        .map(|&p| if p < 2.5 { 2.5 } else { p })
        .sum::<f64>()
        / 12.0
}
