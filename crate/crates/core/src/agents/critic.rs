use rand::Rng;

use crate::env::Observation;
use crate::nn::{Activation, DenseNet};
use crate::{Error, Result};

/// Mean temperature history, sensor margin, both PV features and the time
/// projection.
pub const CRITIC_INPUTS: usize = 9;

const WIDTHS: [usize; 4] = [CRITIC_INPUTS, 28, 28, 1];
const ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Relu, Activation::Identity];

pub fn critic_features(obs: &Observation) -> [f64; CRITIC_INPUTS] {
    let mu = obs.mean_temp_history.map(|m| (m - 50.0) / 5.0);
    [
        mu[0],
        mu[1],
        mu[2],
        mu[3],
        obs.delta_backup / 5.0 - 1.0,
        obs.f_e_pv,
        obs.pv_ratio,
        obs.t_cos,
        obs.t_sin,
    ]
}

/// State-value network.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    net: DenseNet,
}

impl Critic {
    pub fn new(net: DenseNet) -> Result<Self> {
        if net.input_size() != CRITIC_INPUTS || net.output_size() != 1 {
            return Err(Error::domain(format!(
                "critic must map {CRITIC_INPUTS} inputs to one value"
            )));
        }
        Ok(Self { net })
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            net: DenseNet::init(&WIDTHS, &ACTIVATIONS, rng).expect("static shape"),
        }
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn value(&self, obs: &Observation) -> f64 {
        self.net
            .forward(&critic_features(obs))
            .expect("critic input size is fixed")[0]
    }
}
