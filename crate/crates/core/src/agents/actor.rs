use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::nn::{Activation, DenseNet};
use crate::{Error, Result, QUARTERS_PER_DAY};

pub const HOURS: usize = 24;
/// Inputs of one expert subnetwork: sensor temperature, mean temperature,
/// day PV energy feature and PV power ratio.
pub const EXPERT_INPUTS: usize = 4;
/// The expert inputs plus the time of day.
pub const NON_EXPERT_INPUTS: usize = 5;

const EXPERT_WIDTHS: [usize; 4] = [EXPERT_INPUTS, 6, 4, 1];
const NON_EXPERT_WIDTHS: [usize; 4] = [NON_EXPERT_INPUTS, 10, 10, 1];
const HIDDEN: [Activation; 3] = [Activation::Relu, Activation::Relu, Activation::Sigmoid];

const TEMP_CENTER: f64 = 50.0;
const TEMP_SCALE: f64 = 5.0;

/// Scaled actor inputs shared by both variants (time handled separately).
pub fn actor_features(obs: &Observation) -> [f64; EXPERT_INPUTS] {
    [
        obs.delta_backup / TEMP_SCALE - 1.0,
        (obs.mean_temp() - TEMP_CENTER) / TEMP_SCALE,
        obs.f_e_pv,
        obs.pv_ratio,
    ]
}

/// Hourly subnetwork serving quarter `t`.
pub fn subnet_index(t: usize) -> Result<usize> {
    if t >= QUARTERS_PER_DAY {
        return Err(Error::domain(format!(
            "quarter {t} outside 0..{QUARTERS_PER_DAY}"
        )));
    }
    Ok(t / (QUARTERS_PER_DAY / HOURS))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorVariant {
    Expert,
    NonExpert,
}

/// How an observation is turned into an action probability.
#[derive(Debug, Clone, PartialEq)]
pub enum Route {
    /// The embedded backup stage fixes the action; no learnable parameter
    /// is involved.
    Forced(bool),
    /// Evaluate network `index` on `input`.
    Net { index: usize, input: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertActor {
    pub subnets: Vec<DenseNet>,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonExpertActor {
    pub net: DenseNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum Actor {
    Expert(ExpertActor),
    NonExpert(NonExpertActor),
}

impl Actor {
    pub fn init<R: Rng + ?Sized>(
        variant: ActorVariant,
        t_min: f64,
        t_max: f64,
        rng: &mut R,
    ) -> Self {
        match variant {
            ActorVariant::Expert => Actor::Expert(ExpertActor {
                subnets: (0..HOURS)
                    .map(|_| DenseNet::init(&EXPERT_WIDTHS, &HIDDEN, rng).expect("static shape"))
                    .collect(),
                t_min,
                t_max,
            }),
            ActorVariant::NonExpert => Actor::NonExpert(NonExpertActor {
                net: DenseNet::init(&NON_EXPERT_WIDTHS, &HIDDEN, rng).expect("static shape"),
            }),
        }
    }

    pub fn variant(&self) -> ActorVariant {
        match self {
            Actor::Expert(_) => ActorVariant::Expert,
            Actor::NonExpert(_) => ActorVariant::NonExpert,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (nets, inputs) = match self {
            Actor::Expert(e) => {
                if e.subnets.len() != HOURS {
                    return Err(Error::domain(format!(
                        "expert actor needs {HOURS} subnetworks, got {}",
                        e.subnets.len()
                    )));
                }
                if !(e.t_min < e.t_max) {
                    return Err(Error::domain("expert actor needs t_min < t_max"));
                }
                (e.subnets.as_slice(), EXPERT_INPUTS)
            }
            Actor::NonExpert(n) => (std::slice::from_ref(&n.net), NON_EXPERT_INPUTS),
        };
        for net in nets {
            let last = net.layers().last().expect("non-empty");
            if net.input_size() != inputs || net.output_size() != 1 {
                return Err(Error::domain(
                    "actor network has the wrong input or output size",
                ));
            }
            if last.activation != Activation::Sigmoid {
                return Err(Error::domain("actor output must be a sigmoid"));
            }
        }
        Ok(())
    }

    pub fn nets(&self) -> &[DenseNet] {
        match self {
            Actor::Expert(e) => &e.subnets,
            Actor::NonExpert(n) => std::slice::from_ref(&n.net),
        }
    }

    pub fn nets_mut(&mut self) -> &mut [DenseNet] {
        match self {
            Actor::Expert(e) => &mut e.subnets,
            Actor::NonExpert(n) => std::slice::from_mut(&mut n.net),
        }
    }

    pub fn route(&self, obs: &Observation) -> Result<Route> {
        let hour = subnet_index(obs.t)?;
        let features = actor_features(obs);
        match self {
            Actor::Expert(e) => {
                let sensor = obs.sensor_temp(e.t_min);
                if sensor <= e.t_min {
                    Ok(Route::Forced(true))
                } else if sensor >= e.t_max {
                    Ok(Route::Forced(false))
                } else {
                    Ok(Route::Net {
                        index: hour,
                        input: features.to_vec(),
                    })
                }
            }
            Actor::NonExpert(_) => {
                let mut input = features.to_vec();
                input.push(obs.t as f64 / QUARTERS_PER_DAY as f64);
                Ok(Route::Net { index: 0, input })
            }
        }
    }

    /// Probability of switching the heater on.
    pub fn prob(&self, obs: &Observation) -> Result<f64> {
        match self.route(obs)? {
            Route::Forced(u) => Ok(if u { 1.0 } else { 0.0 }),
            Route::Net { index, input } => Ok(self.nets()[index].forward(&input)?[0]),
        }
    }
}
