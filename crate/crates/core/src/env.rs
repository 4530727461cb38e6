//! The household + water heater control environment.
//!
//! One step is one quarter hour. The agent commands the heater, the backup
//! controller may overrule it, the tank absorbs the quarter's hot water draw
//! and the step is rewarded for self-consumed PV power and penalised for net
//! off-take above the capacity anchor `p_c`.

use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::thermal::{self, TankParams, TankState};
use crate::{Error, Result, DT_HOURS, QUARTERS_PER_DAY};

/// Exogenous data for one quarter hour.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuarterRecord {
    /// Mean PV production, kW.
    pub pv_power: f64,
    /// Mean inflexible household load, kW.
    pub load_power: f64,
    /// Hot water drawn during the quarter, L.
    pub dhw_draw: f64,
}

/// Full observable state at the start of a quarter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Mean tank temperature now and over the three previous quarters.
    pub mean_temp_history: [f64; 4],
    /// Sensor temperature minus `t_min`, K.
    pub delta_backup: f64,
    /// Day PV energy relative to a rough maximum for the inverter.
    pub f_e_pv: f64,
    /// Current PV power relative to the day's peak PV power.
    pub pv_ratio: f64,
    pub t_cos: f64,
    pub t_sin: f64,
    /// Quarter of the day, 0..96.
    pub t: usize,
}

impl Observation {
    pub fn sensor_temp(&self, t_min: f64) -> f64 {
        self.delta_backup + t_min
    }

    pub fn mean_temp(&self) -> f64 {
        self.mean_temp_history[0]
    }
}

/// `(cos, sin)` projection of a quarter index on the daily circle.
pub fn time_features(t: usize) -> (f64, f64) {
    let angle = TAU * t as f64 / QUARTERS_PER_DAY as f64;
    (angle.cos(), angle.sin())
}

/// Which heater power enters the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardPower {
    /// Metered power after the backup override.
    #[default]
    Physical,
    /// Power the agent asked for.
    Commanded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Capacity anchor of the reward, kW.
    pub p_c: f64,
    /// PV inverter rating, kW.
    pub inverter_power: f64,
    /// Step length, h.
    pub dt: f64,
    pub reward_power: RewardPower,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            p_c: 2.5,
            inverter_power: 4.0,
            dt: DT_HOURS,
            reward_power: RewardPower::Physical,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_c > 0.0) {
            return Err(Error::domain("p_c must be positive"));
        }
        if !(self.inverter_power > 0.0) {
            return Err(Error::domain("inverter power must be positive"));
        }
        if (self.dt - DT_HOURS).abs() > 1e-12 {
            return Err(Error::domain("only 15-minute steps are supported"));
        }
        Ok(())
    }
}

/// Daily PV features: energy relative to the inverter's rough daily maximum,
/// and the day's peak power (kW).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PvForecast {
    pub f_e_pv: f64,
    pub f_p_pv: f64,
}

/// Perfect-foresight PV features from one day of quarter-hour PV energy (kWh).
pub fn pv_forecasts(day_pv_energy: &[f64], inverter_power: f64, dt: f64) -> PvForecast {
    let rough_max = (QUARTERS_PER_DAY as f64 / 2.0) * dt * inverter_power;
    let total: f64 = day_pv_energy.iter().sum();
    let peak = day_pv_energy.iter().fold(0.0f64, |m, e| m.max(e / dt));
    PvForecast {
        f_e_pv: total / rough_max,
        f_p_pv: peak,
    }
}

pub fn net_power(p_ewh: f64, p_load: f64, p_pv: f64) -> f64 {
    p_ewh + p_load - p_pv
}

/// Heater power covered by the PV surplus over the inflexible load.
pub fn self_consumption(p_ewh: f64, p_load: f64, p_pv: f64) -> f64 {
    (p_pv - p_load).max(0.0).min(p_ewh)
}

pub fn reward(p_ewh: f64, p_load: f64, p_pv: f64, p_c: f64) -> f64 {
    if p_ewh == 0.0 {
        return 0.0;
    }
    let p_net = net_power(p_ewh, p_load, p_pv);
    (p_c - p_net).min(0.0) + self_consumption(p_ewh, p_load, p_pv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub u: bool,
    pub u_phys: bool,
    /// Metered heater power, kW.
    pub p_ewh: f64,
    pub p_net: f64,
    pub p_sc: f64,
    pub reward: f64,
    /// The step closed a day.
    pub day_end: bool,
}

/// One logged quarter: what the controller saw and what happened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Step counter since the environment was created.
    pub step: usize,
    /// Quarter index into the dataset.
    pub index: usize,
    pub temp_lower: f64,
    pub temp_upper: f64,
    pub sensor_temp: f64,
    pub mean_temp: f64,
    pub u: bool,
    pub u_phys: bool,
    pub p_pv: f64,
    pub p_load: f64,
    pub dhw_draw: f64,
    pub p_ewh: f64,
    pub p_net: f64,
    pub p_sc: f64,
    pub reward: f64,
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t",
        "index",
        "temp_lower",
        "temp_upper",
        "sensor_temp",
        "mean_temp",
        "u",
        "u_phys",
        "p_pv",
        "p_load",
        "dhw_l",
        "p_ewh",
        "p_net",
        "p_sc",
        "reward",
    ])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.index.to_string(),
            format!("{:.6}", r.temp_lower),
            format!("{:.6}", r.temp_upper),
            format!("{:.6}", r.sensor_temp),
            format!("{:.6}", r.mean_temp),
            u8::from(r.u).to_string(),
            u8::from(r.u_phys).to_string(),
            format!("{:.6}", r.p_pv),
            format!("{:.6}", r.p_load),
            format!("{:.6}", r.dhw_draw),
            format!("{:.6}", r.p_ewh),
            format!("{:.6}", r.p_net),
            format!("{:.6}", r.p_sc),
            format!("{:.9}", r.reward),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Coupled household and tank simulation over a quarter-hourly dataset.
///
/// Indexing wraps around the dataset, so a one-year dataset can be cycled for
/// several simulation years; the tank state carries over day and year
/// boundaries. The environment is exhausted after `max_steps` steps.
#[derive(Debug, Clone)]
pub struct EwhEnv<'a> {
    data: &'a [QuarterRecord],
    forecasts: Vec<PvForecast>,
    tank: TankParams,
    config: EnvConfig,
    state: TankState,
    start: usize,
    steps: usize,
    max_steps: usize,
    history: [f64; 4],
    rewards: Vec<f64>,
    trace: Option<Vec<TraceRow>>,
}

impl<'a> EwhEnv<'a> {
    pub fn new(
        data: &'a [QuarterRecord],
        tank: TankParams,
        config: EnvConfig,
        initial: TankState,
        start: usize,
        max_steps: usize,
    ) -> Result<Self> {
        if data.is_empty() || !data.len().is_multiple_of(QUARTERS_PER_DAY) {
            return Err(Error::domain(format!(
                "dataset must hold whole days, got {} quarters",
                data.len()
            )));
        }
        config.validate()?;
        let forecasts = data
            .chunks_exact(QUARTERS_PER_DAY)
            .map(|day| {
                let energy: Vec<f64> = day.iter().map(|r| r.pv_power * config.dt).collect();
                pv_forecasts(&energy, config.inverter_power, config.dt)
            })
            .collect();
        Self::with_forecasts(data, forecasts, tank, config, initial, start, max_steps)
    }

    /// Like [`EwhEnv::new`] but with externally supplied daily PV features.
    pub fn with_forecasts(
        data: &'a [QuarterRecord],
        forecasts: Vec<PvForecast>,
        tank: TankParams,
        config: EnvConfig,
        initial: TankState,
        start: usize,
        max_steps: usize,
    ) -> Result<Self> {
        tank.validate()?;
        config.validate()?;
        if forecasts.len() * QUARTERS_PER_DAY != data.len() {
            return Err(Error::domain("need one PV forecast per dataset day"));
        }
        let mu = initial.mean_temp(&tank);
        Ok(Self {
            data,
            forecasts,
            tank,
            config,
            state: initial,
            start,
            steps: 0,
            max_steps,
            history: [mu; 4],
            rewards: Vec::with_capacity(max_steps.min(1 << 22)),
            trace: None,
        })
    }

    /// Log a [`TraceRow`] for every step from now on.
    pub fn record_trace(mut self) -> Self {
        self.trace = Some(Vec::with_capacity(self.max_steps.min(1 << 22)));
        self
    }

    pub fn tank_params(&self) -> &TankParams {
        &self.tank
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &TankState {
        &self.state
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn remaining(&self) -> usize {
        self.max_steps - self.steps
    }

    pub fn is_exhausted(&self) -> bool {
        self.steps >= self.max_steps
    }

    /// Per-step rewards so far.
    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn trace(&self) -> Option<&[TraceRow]> {
        self.trace.as_deref()
    }

    pub fn into_trace(self) -> Option<Vec<TraceRow>> {
        self.trace
    }

    fn index(&self) -> usize {
        (self.start + self.steps) % self.data.len()
    }

    pub fn observe(&self) -> Observation {
        let index = self.index();
        let t = index % QUARTERS_PER_DAY;
        let forecast = self.forecasts[index / QUARTERS_PER_DAY];
        let pv = self.data[index].pv_power;
        let pv_ratio = if forecast.f_p_pv > 0.0 {
            (pv / forecast.f_p_pv).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (t_cos, t_sin) = time_features(t);
        Observation {
            mean_temp_history: self.history,
            delta_backup: thermal::sensor_temp(&self.state) - self.tank.t_min,
            f_e_pv: forecast.f_e_pv,
            pv_ratio,
            t_cos,
            t_sin,
            t,
        }
    }

    /// Apply heater command `u` for one quarter.
    pub fn step(&mut self, u: bool) -> Result<(Observation, f64, StepInfo)> {
        if self.is_exhausted() {
            return Err(Error::EpisodeExhausted { steps: self.steps });
        }
        let index = self.index();
        let rec = self.data[index];
        let sensor = thermal::sensor_temp(&self.state);
        let u_phys = thermal::backup_override(sensor, u, self.tank.t_min, self.tank.t_max);
        let before = self.state;
        let (next, energy) = thermal::step(
            &self.state,
            &self.tank,
            u_phys,
            rec.dhw_draw,
            self.config.dt * 60.0,
        )?;
        let p_ewh = energy / self.config.dt;
        let p_net = net_power(p_ewh, rec.load_power, rec.pv_power);
        let p_sc = self_consumption(p_ewh, rec.load_power, rec.pv_power);
        let p_reward = match self.config.reward_power {
            RewardPower::Physical => p_ewh,
            RewardPower::Commanded => {
                if u {
                    self.tank.heater_power
                } else {
                    0.0
                }
            }
        };
        let r = reward(p_reward, rec.load_power, rec.pv_power, self.config.p_c);

        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRow {
                step: self.steps,
                index,
                temp_lower: before.temp_lower,
                temp_upper: before.temp_upper,
                sensor_temp: sensor,
                mean_temp: self.history[0],
                u,
                u_phys,
                p_pv: rec.pv_power,
                p_load: rec.load_power,
                dhw_draw: rec.dhw_draw,
                p_ewh,
                p_net,
                p_sc,
                reward: r,
            });
        }

        self.state = next;
        self.steps += 1;
        self.rewards.push(r);
        self.history.rotate_right(1);
        self.history[0] = next.mean_temp(&self.tank);

        let info = StepInfo {
            u,
            u_phys,
            p_ewh,
            p_net,
            p_sc,
            reward: r,
            day_end: (index + 1).is_multiple_of(QUARTERS_PER_DAY),
        };
        Ok((self.observe(), r, info))
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    #[test]
    fn forecasts() {
        let mut day = vec![0.0; 96];
        day[40] = 0.5;
        day[41] = 11.5;
        let f = pv_forecasts(&day, 2.0, 0.25);
        assert_relative_eq!(f.f_e_pv, 0.5, epsilon = 1e-12);
        assert_relative_eq!(f.f_p_pv, 46.0, epsilon = 1e-12);
        assert_eq!(pv_forecasts(&[0.0; 96], 2.0, 0.25), PvForecast::default());
        let mut day = vec![0.1; 96];
        day[50] = 0.5;
        assert_relative_eq!(pv_forecasts(&day, 2.0, 0.25).f_p_pv, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn reward_branches() {
        assert_eq!(reward(0.0, 1.0, 0.0, 2.5), 0.0);
        assert_eq!(reward(0.0, 9.0, 0.0, 2.5), 0.0);
        assert_relative_eq!(reward(2.0, 1.5, 0.5, 2.5), -0.5, epsilon = 1e-12);
        assert_relative_eq!(reward(2.0, 0.5, 3.0, 2.5), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn self_consumption_cases() {
        assert_eq!(self_consumption(1.5, 1.0, 3.0), 1.5);
        assert_eq!(self_consumption(2.0, 5.0, 3.0), 0.0);
        assert_eq!(self_consumption(0.0, 1.0, 3.0), 0.0);
    }

    fn day(pv: f64, load: f64, draw: f64) -> Vec<QuarterRecord> {
        vec![
            QuarterRecord {
                pv_power: pv,
                load_power: load,
                dhw_draw: draw
            };
            96
        ]
    }

    #[test]
    fn override_forces_heater_off_when_hot() {
        let data = day(0.0, 0.5, 0.0);
        let mut env = EwhEnv::new(
            &data,
            TankParams::default(),
            EnvConfig::default(),
            TankState::uniform(56.0),
            0,
            96,
        )
        .unwrap();
        let (_, r, info) = env.step(true).unwrap();
        assert!(!info.u_phys);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn override_forces_heater_on_when_cold() {
        let data = day(0.0, 0.5, 0.0);
        let mut env = EwhEnv::new(
            &data,
            TankParams::default(),
            EnvConfig::default(),
            TankState::uniform(44.0),
            0,
            96,
        )
        .unwrap();
        let (_, _, info) = env.step(false).unwrap();
        assert!(info.u_phys);
        assert_relative_eq!(info.p_ewh, 2.4, epsilon = 1e-12);
    }

    #[test]
    fn commanded_reward_switch() {
        let data = day(3.0, 0.5, 0.0);
        let config = EnvConfig {
            reward_power: RewardPower::Commanded,
            ..EnvConfig::default()
        };
        let mut env = EwhEnv::new(
            &data,
            TankParams::default(),
            config,
            TankState::uniform(56.0),
            0,
            96,
        )
        .unwrap();
        let (_, r, info) = env.step(true).unwrap();
        assert!(!info.u_phys);
        assert_relative_eq!(r, 2.4, epsilon = 1e-12);
    }

    #[test]
    fn history_and_exhaustion() {
        let data = day(0.0, 0.5, 2.0);
        let tank = TankParams::default();
        let mut env = EwhEnv::new(
            &data,
            tank,
            EnvConfig::default(),
            TankState::uniform(50.0),
            90,
            10,
        )
        .unwrap()
        .record_trace();
        let first = env.observe();
        assert_eq!(first.mean_temp_history, [50.0; 4]);
        assert_eq!(first.t, 90);
        let mut last = first;
        for _ in 0..10 {
            last = env.step(false).unwrap().0;
        }
        assert!(env.is_exhausted());
        assert!(matches!(
            env.step(false),
            Err(Error::EpisodeExhausted { steps: 10 })
        ));
        // Wrapped into the next day.
        assert_eq!(last.t, 4);
        let trace = env.trace().unwrap();
        let expected = [
            env.state().mean_temp(&tank),
            trace[9].mean_temp,
            trace[8].mean_temp,
            trace[7].mean_temp,
        ];
        assert_eq!(last.mean_temp_history, expected);
    }

    #[test]
    fn no_pv_day_has_zero_ratio() {
        let data = day(0.0, 0.5, 0.0);
        let env = EwhEnv::new(
            &data,
            TankParams::default(),
            EnvConfig::default(),
            TankState::uniform(50.0),
            0,
            1,
        )
        .unwrap();
        let obs = env.observe();
        assert_eq!((obs.pv_ratio, obs.f_e_pv), (0.0, 0.0));
        assert_relative_eq!(obs.t_cos.powi(2) + obs.t_sin.powi(2), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let data = day(1.0, 0.5, 0.0);
        let mut env = EwhEnv::new(
            &data,
            TankParams::default(),
            EnvConfig::default(),
            TankState::uniform(50.0),
            0,
            3,
        )
        .unwrap()
        .record_trace();
        for _ in 0..3 {
            env.step(true).unwrap();
        }
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, env.trace().unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("t,index,temp_lower"));
    }
}
