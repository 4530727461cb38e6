//! Proximal policy optimization with a clipped surrogate objective.
//!
//! ```text
//! per iteration:
//!   1. roll out `horizon` steps, u ~ Bernoulli(actor)
//!   2. advantages and value targets by GAE
//!   3. `epochs` shuffled passes of minibatch updates on actor and critic
//! ```

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::actor::{Actor, ActorVariant, Route};
use super::critic::{critic_features, Critic};
use super::gae::gae;
use super::{ControlEnv, PolicyParams};
use crate::env::Observation;
use crate::nn::{Adam, AdamConfig, GradientTape};
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    /// Clipping range of the probability ratio.
    pub epsilon: f64,
    pub gamma: f64,
    /// GAE interpolation factor.
    pub lambda: f64,
    /// Environment steps per iteration.
    pub horizon: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    /// Global gradient norm cap per network group; 0 disables clipping.
    pub max_grad_norm: f64,
    pub adam: AdamConfig,
    /// Act on `p ≥ 0.5` instead of sampling.
    pub greedy: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            gamma: 0.99,
            lambda: 0.99,
            horizon: 960,
            epochs: 4,
            minibatch: 96,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            adam: AdamConfig::default(),
            greedy: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::domain(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::domain(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.horizon == 0 || self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::domain(
                "horizon, epochs and minibatch must be positive",
            ));
        }
        if !(self.entropy_coef >= 0.0 && self.max_grad_norm >= 0.0) {
            return Err(Error::domain(
                "entropy coefficient and gradient cap must be non-negative",
            ));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::domain("learning rate must be positive"));
        }
        Ok(())
    }
}

pub fn prob_ratio(logp_new: f64, logp_old: f64) -> f64 {
    (logp_new - logp_old).exp()
}

/// `min(g·Â, clip(g, 1 − ε, 1 + ε)·Â)`.
pub fn clipped_objective(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

pub fn bernoulli_entropy(p: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

fn log_prob(p: f64, u: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if u {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// An action drawn from the actor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub u: bool,
    pub prob: f64,
    pub logp: f64,
    /// The actor's own override stage fixed the action.
    pub forced: bool,
}

/// One stored transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub obs: Observation,
    pub u: bool,
    pub logp: f64,
    pub forced: bool,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub advantage: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub samples: Vec<Sample>,
    /// Critic value of the state after the last sample.
    pub bootstrap_value: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Recompute advantages and targets from the stored values.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let rewards: Vec<f64> = self.samples.iter().map(|s| s.reward).collect();
        let dones: Vec<bool> = self.samples.iter().map(|s| s.done).collect();
        let mut values: Vec<f64> = self.samples.iter().map(|s| s.value).collect();
        values.push(self.bootstrap_value);
        let (adv, targets) = gae(&rewards, &values, &dones, gamma, lambda)?;
        for ((s, a), t) in self.samples.iter_mut().zip(adv).zip(targets) {
            s.advantage = a;
            s.target = t;
        }
        Ok(())
    }

    pub fn mean_reward(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.reward).sum::<f64>() / self.samples.len() as f64
    }
}

/// Standardize advantages in place (zero mean, unit deviation).
pub fn normalize_advantages(batch: &mut [Sample]) {
    if batch.len() < 2 {
        return;
    }
    let n = batch.len() as f64;
    let mean = batch.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = batch
        .iter()
        .map(|s| (s.advantage - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    for s in batch {
        s.advantage = (s.advantage - mean) / (std + 1e-8);
    }
}

/// Actor loss over a minibatch with its parameter gradients.
#[derive(Debug, Clone)]
pub struct ActorLoss {
    /// Minimized quantity: `−objective − entropy_coef·entropy`.
    pub loss: f64,
    /// Mean clipped surrogate objective.
    pub objective: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left the clip range.
    pub clip_fraction: f64,
    /// One tape per actor network.
    pub grads: Vec<GradientTape>,
    /// Networks that received a gradient contribution.
    pub touched: Vec<bool>,
}

pub fn actor_loss(actor: &Actor, batch: &[Sample], config: &PpoConfig) -> Result<ActorLoss> {
    let nets = actor.nets();
    let mut grads: Vec<GradientTape> = nets.iter().map(GradientTape::zeros_like).collect();
    let mut touched = vec![false; nets.len()];
    let n = batch.len().max(1) as f64;
    let (mut objective, mut entropy, mut clipped) = (0.0, 0.0, 0usize);

    for s in batch {
        match actor.route(&s.obs)? {
            // Forced samples keep the old log-prob (ratio 1) and carry no
            // parameter dependence.
            Route::Forced(_) => objective += clipped_objective(1.0, s.advantage, config.epsilon),
            Route::Net { index, input } => {
                let trace = nets[index].forward_trace(&input)?;
                let p = trace.output()[0];
                let logp = log_prob(p, s.u);
                let ratio = prob_ratio(logp, s.logp);
                let obj = clipped_objective(ratio, s.advantage, config.epsilon);
                objective += obj;
                entropy += bernoulli_entropy(p);
                if (ratio - 1.0).abs() > config.epsilon {
                    clipped += 1;
                }

                if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                    continue;
                }
                let dlogp_dp = if s.u { 1.0 / p } else { -1.0 / (1.0 - p) };
                let unclipped_active = ratio * s.advantage <= obj;
                let dobj_dp = if unclipped_active {
                    s.advantage * ratio * dlogp_dp
                } else {
                    0.0
                };
                let dent_dp = ((1.0 - p) / p).ln();
                let dloss_dp = -(dobj_dp + config.entropy_coef * dent_dp) / n;
                if dloss_dp != 0.0 {
                    nets[index].backward_into(&trace, &[dloss_dp], &mut grads[index])?;
                    touched[index] = true;
                }
            }
        }
    }
    let objective = objective / n;
    let entropy = entropy / n;
    Ok(ActorLoss {
        loss: -objective - config.entropy_coef * entropy,
        objective,
        entropy,
        clip_fraction: clipped as f64 / n,
        grads,
        touched,
    })
}

/// Mean squared value error over a minibatch and its gradient.
pub fn critic_loss(critic: &Critic, batch: &[Sample]) -> Result<(f64, GradientTape)> {
    let net = critic.net();
    let mut tape = GradientTape::zeros_like(net);
    let n = batch.len().max(1) as f64;
    let mut loss = 0.0;
    for s in batch {
        let trace = net.forward_trace(&critic_features(&s.obs))?;
        let err = trace.output()[0] - s.target;
        loss += err * err;
        net.backward_into(&trace, &[2.0 * err / n], &mut tape)?;
    }
    Ok((loss / n, tape))
}

/// Clipped surrogate objective (to be maximized) and critic loss of a
/// minibatch whose advantages are already normalized.
pub fn ppo_losses(
    batch: &[Sample],
    actor: &Actor,
    critic: &Critic,
    config: &PpoConfig,
) -> Result<(f64, f64)> {
    let a = actor_loss(actor, batch, config)?;
    let (c, _) = critic_loss(critic, batch)?;
    Ok((a.objective, c))
}

fn clip_grads(tapes: &mut [GradientTape], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = tapes.iter().map(GradientTape::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        tapes.iter_mut().for_each(|t| t.scale(scale));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationStats {
    pub steps: usize,
    pub mean_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Actor, critic and their optimizers.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub actor: Actor,
    pub critic: Critic,
    pub config: PpoConfig,
    actor_opts: Vec<Adam>,
    critic_opt: Adam,
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(
        variant: ActorVariant,
        t_min: f64,
        t_max: f64,
        config: PpoConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let actor = Actor::init(variant, t_min, t_max, rng);
        let critic = Critic::init(rng);
        Self::with_parts(actor, critic, config)
    }

    /// Start from transferred parameters with fresh optimizer state.
    pub fn from_params(params: PolicyParams, config: PpoConfig) -> Result<Self> {
        let critic = Critic::new(params.critic)?;
        Self::with_parts(params.actor, critic, config)
    }

    pub fn with_parts(actor: Actor, critic: Critic, config: PpoConfig) -> Result<Self> {
        config.validate()?;
        actor.validate()?;
        let actor_opts = actor
            .nets()
            .iter()
            .map(|n| Adam::new(config.adam, n))
            .collect();
        let critic_opt = Adam::new(config.adam, critic.net());
        Ok(Self {
            actor,
            critic,
            config,
            actor_opts,
            critic_opt,
        })
    }

    pub fn params(&self) -> PolicyParams {
        PolicyParams::new(self.actor.clone(), self.critic.net().clone())
    }

    pub fn decide<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<Decision> {
        match self.actor.route(obs)? {
            Route::Forced(u) => Ok(Decision {
                u,
                prob: if u { 1.0 } else { 0.0 },
                logp: 0.0,
                forced: true,
            }),
            Route::Net { index, input } => {
                let p = self.actor.nets()[index].forward(&input)?[0];
                let u = if self.config.greedy {
                    p >= 0.5
                } else {
                    rng.random::<f64>() < p
                };
                Ok(Decision {
                    u,
                    prob: p,
                    logp: log_prob(p, u),
                    forced: false,
                })
            }
        }
    }

    /// Roll out up to `steps` steps (fewer if the environment runs out).
    pub fn collect<E: ControlEnv, R: Rng + ?Sized>(
        &self,
        env: &mut E,
        steps: usize,
        rng: &mut R,
    ) -> Result<RolloutBuffer> {
        let steps = steps.min(env.remaining());
        let mut samples = Vec::with_capacity(steps);
        for _ in 0..steps {
            let obs = env.observe();
            let d = self.decide(&obs, rng)?;
            let value = self.critic.value(&obs);
            let (reward, done) = env.act(d.u)?;
            samples.push(Sample {
                obs,
                u: d.u,
                logp: d.logp,
                forced: d.forced,
                reward,
                value,
                done,
                advantage: 0.0,
                target: 0.0,
            });
        }
        let bootstrap_value = self.critic.value(&env.observe());
        Ok(RolloutBuffer {
            samples,
            bootstrap_value,
        })
    }

    /// Minibatch updates over a collected buffer. Returns mean actor loss,
    /// critic loss, entropy and clip fraction over all minibatches.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buffer: &mut RolloutBuffer,
        rng: &mut R,
    ) -> Result<(f64, f64, f64, f64)> {
        if buffer.is_empty() {
            return Ok((0.0, 0.0, 0.0, 0.0));
        }
        buffer.compute_advantages(self.config.gamma, self.config.lambda)?;
        let mut order: Vec<usize> = (0..buffer.len()).collect();
        let (mut a_sum, mut c_sum, mut e_sum, mut f_sum, mut count) = (0.0, 0.0, 0.0, 0.0, 0);
        for _ in 0..self.config.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.config.minibatch) {
                let mut batch: Vec<Sample> = chunk.iter().map(|&i| buffer.samples[i]).collect();
                normalize_advantages(&mut batch);

                let mut a = actor_loss(&self.actor, &batch, &self.config)?;
                let (c_loss, mut c_grad) = critic_loss(&self.critic, &batch)?;
                if !a.loss.is_finite() || !c_loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "PPO losses (actor {}, critic {c_loss})",
                        a.loss
                    )));
                }

                clip_grads(&mut a.grads, self.config.max_grad_norm);
                clip_grads(std::slice::from_mut(&mut c_grad), self.config.max_grad_norm);
                let nets = self.actor.nets_mut();
                for (i, tape) in a.grads.iter().enumerate() {
                    if a.touched[i] && !self.actor_opts[i].step(&mut nets[i], tape) {
                        return Err(Error::NonFinite("actor gradient".into()));
                    }
                }
                if !self.critic_opt.step(self.critic.net_mut(), &c_grad) {
                    return Err(Error::NonFinite("critic gradient".into()));
                }

                a_sum += a.loss;
                c_sum += c_loss;
                e_sum += a.entropy;
                f_sum += a.clip_fraction;
                count += 1;
            }
        }
        let n = count as f64;
        Ok((a_sum / n, c_sum / n, e_sum / n, f_sum / n))
    }

    /// Collect one rollout and learn from it.
    pub fn train_iteration<E: ControlEnv, R: Rng + ?Sized>(
        &mut self,
        env: &mut E,
        rng: &mut R,
    ) -> Result<IterationStats> {
        let mut buffer = self.collect(env, self.config.horizon, rng)?;
        let (actor_loss, critic_loss, entropy, clip_fraction) = self.update(&mut buffer, rng)?;
        Ok(IterationStats {
            steps: buffer.len(),
            mean_reward: buffer.mean_reward(),
            actor_loss,
            critic_loss,
            entropy,
            clip_fraction,
        })
    }

    /// Run until the environment is exhausted, learning online when `learn`.
    pub fn run<E: ControlEnv, R: Rng + ?Sized>(
        &mut self,
        env: &mut E,
        rng: &mut R,
        learn: bool,
    ) -> Result<Vec<IterationStats>> {
        let mut stats = Vec::new();
        while env.remaining() > 0 {
            if learn {
                stats.push(self.train_iteration(env, rng)?);
            } else {
                let buffer = self.collect(env, self.config.horizon, rng)?;
                stats.push(IterationStats {
                    steps: buffer.len(),
                    mean_reward: buffer.mean_reward(),
                    ..IterationStats::default()
                });
            }
        }
        Ok(stats)
    }
}
