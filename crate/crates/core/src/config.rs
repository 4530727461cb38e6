//! Flat key-value run configuration (TOML syntax). Every key is optional and
//! falls back to the built-in default; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::PpoConfig;
use crate::env::{EnvConfig, RewardPower};
use crate::experiment::{Controller, ExperimentPlan};
use crate::nn::AdamConfig;
use crate::tariff::Prices;
use crate::thermal::{TankParams, TankState};
use crate::{Error, Result, DT_HOURS};

/// Environment variable naming a config file to use when none is given.
pub const CONFIG_ENV_VAR: &str = "EWH_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // Tank.
    pub volume_lower: f64,
    pub volume_upper: f64,
    pub heater_power: f64,
    pub loss_coefficient: f64,
    pub ambient_temp: f64,
    pub inlet_temp: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Uniform tank temperature at the start of every run, °C.
    pub initial_temp: f64,

    // Tariff.
    pub lambda_cap: f64,
    pub lambda_e: f64,
    pub lambda_tax_e: f64,
    pub lambda_tax_fixed: f64,

    // Environment.
    pub p_c: f64,
    /// PV inverter rating, kW; 0 uses the dataset's peak PV power.
    pub inverter_power: f64,
    pub reward_power: RewardPower,

    // PPO.
    pub epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub horizon: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Act on `p ≥ 0.5` instead of sampling.
    pub greedy_actions: bool,

    // Experiment.
    pub pretrain_years: usize,
    pub test_years: usize,
    pub seeds: Vec<u64>,
    pub rbc_hours: Vec<usize>,
    /// Keep training the RL agents during the test phase.
    pub online_learning: bool,
    /// Bundled profile used for the synthetic pre-training year.
    pub pretrain_profile: String,
    /// Generator seed of the pre-training year.
    pub pretrain_data_seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        let tank = TankParams::default();
        let prices = Prices::default();
        let env = EnvConfig::default();
        let ppo = PpoConfig::default();
        let plan = ExperimentPlan::default();
        Self {
            volume_lower: tank.volume_lower,
            volume_upper: tank.volume_upper,
            heater_power: tank.heater_power,
            loss_coefficient: tank.loss_coefficient,
            ambient_temp: tank.ambient_temp,
            inlet_temp: tank.inlet_temp,
            t_min: tank.t_min,
            t_max: tank.t_max,
            initial_temp: 0.5 * (tank.t_min + tank.t_max),
            lambda_cap: prices.lambda_cap,
            lambda_e: prices.lambda_e,
            lambda_tax_e: prices.lambda_tax_e,
            lambda_tax_fixed: prices.lambda_tax_fixed,
            p_c: env.p_c,
            inverter_power: 0.0,
            reward_power: env.reward_power,
            epsilon: ppo.epsilon,
            gamma: ppo.gamma,
            gae_lambda: ppo.lambda,
            horizon: ppo.horizon,
            epochs: ppo.epochs,
            minibatch: ppo.minibatch,
            entropy_coef: ppo.entropy_coef,
            max_grad_norm: ppo.max_grad_norm,
            learning_rate: ppo.adam.learning_rate,
            adam_beta1: ppo.adam.beta1,
            adam_beta2: ppo.adam.beta2,
            adam_eps: ppo.adam.eps,
            greedy_actions: ppo.greedy,
            pretrain_years: plan.pretrain_years,
            test_years: plan.test_years,
            seeds: plan.seeds,
            rbc_hours: crate::baselines::RBC_HOURS.to_vec(),
            online_learning: plan.online_learning,
            pretrain_profile: "training".into(),
            pretrain_data_seed: crate::data::fixture("training").map_or(0, |f| f.seed),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Explicit path first, then the path in [`CONFIG_ENV_VAR`], then the
    /// defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV_VAR)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => Self::load(&path),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.tank().validate().map_err(wrap)?;
        self.prices().validate().map_err(wrap)?;
        self.ppo().validate().map_err(wrap)?;
        if !(self.inverter_power >= 0.0) {
            return Err(Error::Config("inverter_power must be non-negative".into()));
        }
        EnvConfig {
            inverter_power: 1.0,
            ..self.env(1.0)
        }
        .validate()
        .map_err(wrap)?;
        if !(self.initial_temp > self.inlet_temp && self.initial_temp.is_finite()) {
            return Err(Error::Config("initial_temp must exceed inlet_temp".into()));
        }
        self.plan().validate().map_err(wrap)?;
        if crate::data::fixture(&self.pretrain_profile).is_none() {
            return Err(Error::Config(format!(
                "unknown pretrain_profile {:?}",
                self.pretrain_profile
            )));
        }
        Ok(())
    }

    pub fn tank(&self) -> TankParams {
        TankParams {
            volume_lower: self.volume_lower,
            volume_upper: self.volume_upper,
            heater_power: self.heater_power,
            loss_coefficient: self.loss_coefficient,
            ambient_temp: self.ambient_temp,
            inlet_temp: self.inlet_temp,
            t_min: self.t_min,
            t_max: self.t_max,
        }
    }

    pub fn initial_state(&self) -> TankState {
        TankState::uniform(self.initial_temp)
    }

    pub fn prices(&self) -> Prices {
        Prices {
            lambda_cap: self.lambda_cap,
            lambda_e: self.lambda_e,
            lambda_tax_e: self.lambda_tax_e,
            lambda_tax_fixed: self.lambda_tax_fixed,
        }
    }

    /// Environment settings for a dataset whose peak PV power is
    /// `dataset_peak_pv` kW.
    pub fn env(&self, dataset_peak_pv: f64) -> EnvConfig {
        let inverter_power = if self.inverter_power > 0.0 {
            self.inverter_power
        } else if dataset_peak_pv > 0.0 {
            dataset_peak_pv
        } else {
            1.0
        };
        EnvConfig {
            p_c: self.p_c,
            inverter_power,
            dt: DT_HOURS,
            reward_power: self.reward_power,
        }
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            epsilon: self.epsilon,
            gamma: self.gamma,
            lambda: self.gae_lambda,
            horizon: self.horizon,
            epochs: self.epochs,
            minibatch: self.minibatch,
            entropy_coef: self.entropy_coef,
            max_grad_norm: self.max_grad_norm,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            greedy: self.greedy_actions,
        }
    }

    pub fn plan(&self) -> ExperimentPlan {
        let mut controllers = vec![Controller::Hc];
        controllers.extend(self.rbc_hours.iter().map(|&h| Controller::Rbc(h)));
        controllers.extend([Controller::RlExpert, Controller::RlPlain]);
        ExperimentPlan {
            pretrain_years: self.pretrain_years,
            test_years: self.test_years,
            seeds: self.seeds.clone(),
            controllers,
            online_learning: self.online_learning,
        }
    }
}
