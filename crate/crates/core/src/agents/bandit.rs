//! Toy contextual bandit with a known optimum, for trainer sanity checks.
//!
//! Each step shows a random state bit through the PV features; switching the
//! heater on pays +1 when the bit is set, switching it off pays +1 when it is
//! clear. Every step is a complete episode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ControlEnv;
use crate::env::{time_features, Observation};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ContextualBandit {
    rng: ChaCha8Rng,
    bit: bool,
    remaining: usize,
}

impl ContextualBandit {
    pub fn new(seed: u64, steps: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bit = rng.random();
        Self {
            rng,
            bit,
            remaining: steps,
        }
    }
}

impl ControlEnv for ContextualBandit {
    fn observe(&self) -> Observation {
        let x = if self.bit { 1.0 } else { 0.0 };
        let t = 48;
        let (t_cos, t_sin) = time_features(t);
        Observation {
            mean_temp_history: [50.0; 4],
            delta_backup: 5.0,
            f_e_pv: x,
            pv_ratio: x,
            t_cos,
            t_sin,
            t,
        }
    }

    fn act(&mut self, u: bool) -> Result<(f64, bool)> {
        if self.remaining == 0 {
            return Err(Error::EpisodeExhausted { steps: 0 });
        }
        self.remaining -= 1;
        let reward = if u == self.bit { 1.0 } else { 0.0 };
        self.bit = self.rng.random();
        Ok((reward, true))
    }

    fn remaining(&self) -> usize {
        self.remaining
    }
}
