//! Reference controllers: a hysteresis thermostat and a fixed daily heating
//! window. Both run under the environment's backup override like any agent.

use log::warn;

use crate::thermal::backup_override;
use crate::QUARTERS_PER_DAY;

/// Window start hours evaluated for the rule-based controller.
pub const RBC_HOURS: [usize; 4] = [10, 11, 12, 13];
/// Length of the rule-based heating window, hours.
pub const RBC_WINDOW_HOURS: usize = 4;

/// Deadband thermostat: on at or below `t_min`, off at or above `t_max`,
/// otherwise keep the previous heater state.
pub fn hc_action(sensor_temp: f64, prev_heater: bool, t_min: f64, t_max: f64) -> bool {
    backup_override(sensor_temp, prev_heater, t_min, t_max)
}

/// Heater on during `[t_rbc, t_rbc + 4)` hours of the day.
pub fn rbc_action(t: usize, t_rbc: usize) -> bool {
    let start = t_rbc * QUARTERS_PER_DAY / 24;
    let end = (t_rbc + RBC_WINDOW_HOURS) * QUARTERS_PER_DAY / 24;
    let q = t % QUARTERS_PER_DAY;
    q >= start && q < end
}

/// Warns (but accepts) window starts outside the evaluated sweep.
pub fn check_rbc_hour(t_rbc: usize) -> bool {
    let known = RBC_HOURS.contains(&t_rbc);
    if !known {
        warn!("rule-based window start {t_rbc}h is outside the evaluated set {RBC_HOURS:?}");
    }
    known
}

/// Stateful hysteresis controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hysteresis {
    pub t_min: f64,
    pub t_max: f64,
    /// Ignore the previous state and command off inside the deadband.
    pub memoryless: bool,
    heater_on: bool,
}

impl Hysteresis {
    pub fn new(t_min: f64, t_max: f64) -> Self {
        Self {
            t_min,
            t_max,
            memoryless: false,
            heater_on: false,
        }
    }

    pub fn memoryless(t_min: f64, t_max: f64) -> Self {
        Self {
            memoryless: true,
            ..Self::new(t_min, t_max)
        }
    }

    pub fn act(&mut self, sensor_temp: f64) -> bool {
        let prev = !self.memoryless && self.heater_on;
        self.heater_on = hc_action(sensor_temp, prev, self.t_min, self.t_max);
        self.heater_on
    }

    /// Sync with the heater state the plant actually applied.
    pub fn observe_applied(&mut self, heater_on: bool) {
        self.heater_on = heater_on;
    }
}
