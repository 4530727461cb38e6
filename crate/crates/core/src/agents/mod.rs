//! PPO agents for heater control.
//!
//! Two actor variants share one trainer: the expert actor splits the day into
//! 24 hourly subnetworks and embeds the backup controller as a non-learned
//! output stage, the non-expert actor is a plain fully connected network.

mod actor;
pub mod bandit;
mod critic;
mod gae;
mod ppo;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EwhEnv, Observation};
use crate::nn::DenseNet;
use crate::{Error, Result};

pub use actor::{
    actor_features, subnet_index, Actor, ActorVariant, ExpertActor, NonExpertActor, Route,
    EXPERT_INPUTS, NON_EXPERT_INPUTS,
};
pub use critic::{critic_features, Critic, CRITIC_INPUTS};
pub use gae::gae;
pub use ppo::{
    actor_loss, bernoulli_entropy, clipped_objective, critic_loss, normalize_advantages,
    ppo_losses, prob_ratio, ActorLoss, Decision, IterationStats, PpoAgent, PpoConfig,
    RolloutBuffer, Sample, PROB_CLAMP,
};

/// An environment the PPO trainer can act in.
pub trait ControlEnv {
    fn observe(&self) -> Observation;

    /// Apply heater command `u`. Returns the reward and whether the step
    /// ended an episode for good (no bootstrapping past it).
    fn act(&mut self, u: bool) -> Result<(f64, bool)>;

    /// Steps left before the environment is exhausted.
    fn remaining(&self) -> usize;
}

impl ControlEnv for EwhEnv<'_> {
    fn observe(&self) -> Observation {
        EwhEnv::observe(self)
    }

    fn act(&mut self, u: bool) -> Result<(f64, bool)> {
        let (_, reward, _) = self.step(u)?;
        // Day boundaries are bookkeeping only; the tank carries over.
        Ok((reward, false))
    }

    fn remaining(&self) -> usize {
        EwhEnv::remaining(self)
    }
}

pub const POLICY_FORMAT: &str = "ewhrl-policy";
pub const POLICY_VERSION: u32 = 1;

/// Actor and critic weights: the payload carried from pre-training into
/// the test phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub format: String,
    pub version: u32,
    pub actor: Actor,
    pub critic: DenseNet,
}

impl PolicyParams {
    pub fn new(actor: Actor, critic: DenseNet) -> Self {
        Self {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            actor,
            critic,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: PolicyParams = serde_json::from_str(text)?;
        if params.format != POLICY_FORMAT {
            return Err(Error::domain(format!(
                "unknown policy format {:?}",
                params.format
            )));
        }
        if params.version != POLICY_VERSION {
            return Err(Error::domain(format!(
                "unsupported policy version {} (expected {POLICY_VERSION})",
                params.version
            )));
        }
        params.actor.validate()?;
        Critic::new(params.critic.clone())?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(Error::from)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}
