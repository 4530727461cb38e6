//! Two-layer electric water heater model and its backup (safety) controller.
//!
//! The tank is a column of two fully mixed layers. One step applies, in this
//! order: plug-flow hot water draw, electric heating of the lower layer,
//! standing losses to ambient and a buoyancy correction that mixes the two
//! layers whenever the lower one ends up warmer than the upper one.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Volumetric heat capacity of water, J/(L·K).
pub const WATER_HEAT_CAPACITY: f64 = 4186.0;

/// Upper sanity bound on any layer temperature, °C.
pub const MAX_LAYER_TEMP: f64 = 95.0;

const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankParams {
    /// Lower layer volume, L. The heating element sits in this layer.
    pub volume_lower: f64,
    /// Upper layer volume, L. Hot water is drawn from the top of this layer.
    pub volume_upper: f64,
    /// Electrical rating of the heating element, kW.
    pub heater_power: f64,
    /// Standing loss coefficient of each layer, W/K.
    pub loss_coefficient: f64,
    pub ambient_temp: f64,
    pub inlet_temp: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for TankParams {
    fn default() -> Self {
        Self {
            volume_lower: 100.0,
            volume_upper: 100.0,
            heater_power: 2.4,
            loss_coefficient: 1.0,
            ambient_temp: 20.0,
            inlet_temp: 12.0,
            t_min: 45.0,
            t_max: 55.0,
        }
    }
}

impl TankParams {
    pub fn total_volume(&self) -> f64 {
        self.volume_lower + self.volume_upper
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.volume_lower,
            self.volume_upper,
            self.heater_power,
            self.loss_coefficient,
            self.ambient_temp,
            self.inlet_temp,
            self.t_min,
            self.t_max,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("tank parameters must be finite"));
        }
        if self.volume_lower <= 0.0 || self.volume_upper <= 0.0 {
            return Err(Error::domain("layer volumes must be positive"));
        }
        if self.t_min >= self.t_max {
            return Err(Error::domain(format!(
                "t_min ({}) must be below t_max ({})",
                self.t_min, self.t_max
            )));
        }
        if self.heater_power <= 0.0 {
            return Err(Error::domain("heater power must be positive"));
        }
        if self.loss_coefficient < 0.0 {
            return Err(Error::domain("loss coefficient must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankState {
    pub temp_lower: f64,
    pub temp_upper: f64,
    pub heater_on: bool,
}

impl TankState {
    /// A fully mixed tank at `temp` with the heater off.
    pub fn uniform(temp: f64) -> Self {
        Self {
            temp_lower: temp,
            temp_upper: temp,
            heater_on: false,
        }
    }

    /// Volume-weighted mean water temperature.
    pub fn mean_temp(&self, params: &TankParams) -> f64 {
        (self.temp_lower * params.volume_lower + self.temp_upper * params.volume_upper)
            / params.total_volume()
    }

    /// Thermal energy stored above 0 °C, kWh.
    pub fn stored_energy(&self, params: &TankParams) -> f64 {
        WATER_HEAT_CAPACITY
            * (self.temp_lower * params.volume_lower + self.temp_upper * params.volume_upper)
            / JOULES_PER_KWH
    }
}

/// Backup controller: forces the heater on at or below `t_min`, off at or
/// above `t_max`, and passes the requested action through in between.
pub fn backup_override(sensor_temp: f64, requested: bool, t_min: f64, t_max: f64) -> bool {
    if sensor_temp <= t_min {
        true
    } else if sensor_temp >= t_max {
        false
    } else {
        requested
    }
}

/// Temperature at the backup sensor, halfway up the tank. With two layers
/// this is the layer interface, taken as the mean of both layers.
pub fn sensor_temp(state: &TankState) -> f64 {
    0.5 * (state.temp_lower + state.temp_upper)
}

/// Advance the tank by `dt_minutes`. Returns the new state and the electrical
/// energy drawn by the heater, kWh.
pub fn step(
    state: &TankState,
    params: &TankParams,
    heater_on: bool,
    draw: f64,
    dt_minutes: f64,
) -> Result<(TankState, f64)> {
    let total = params.total_volume();
    if !(draw >= 0.0 && draw <= total) {
        return Err(Error::domain(format!(
            "draw of {draw} L outside [0, {total}] L"
        )));
    }
    if !(dt_minutes > 0.0) {
        return Err(Error::domain(format!(
            "time step must be positive, got {dt_minutes}"
        )));
    }
    let dt_s = dt_minutes * 60.0;

    let (mut lower, mut upper) = plug_flow(state, params, draw);

    let energy_kwh = if heater_on {
        let joules = params.heater_power * 1e3 * dt_s;
        lower += joules / (params.volume_lower * WATER_HEAT_CAPACITY);
        params.heater_power * dt_s / 3600.0
    } else {
        0.0
    };

    let ua = params.loss_coefficient;
    lower -=
        ua * (lower - params.ambient_temp) * dt_s / (params.volume_lower * WATER_HEAT_CAPACITY);
    upper -=
        ua * (upper - params.ambient_temp) * dt_s / (params.volume_upper * WATER_HEAT_CAPACITY);

    if lower > upper {
        let mixed = (lower * params.volume_lower + upper * params.volume_upper) / total;
        lower = mixed;
        upper = mixed;
    }

    Ok((
        TankState {
            temp_lower: lower,
            temp_upper: upper,
            heater_on,
        },
        energy_kwh,
    ))
}

/// Shift the water column up by `draw` liters: the top `draw` liters leave,
/// inlet water enters at the bottom. Returns the new (lower, upper) layer
/// temperatures.
fn plug_flow(state: &TankState, params: &TankParams, draw: f64) -> (f64, f64) {
    if draw == 0.0 {
        return (state.temp_lower, state.temp_upper);
    }
    // Column segments from bottom to top after the shift, as (temp, volume).
    let segments = [
        (params.inlet_temp, draw),
        (state.temp_lower, params.volume_lower),
        (state.temp_upper, params.volume_upper),
    ];
    let lower = column_average(&segments, 0.0, params.volume_lower);
    let upper = column_average(&segments, params.volume_lower, params.total_volume());
    (lower, upper)
}

fn column_average(segments: &[(f64, f64)], from: f64, to: f64) -> f64 {
    let mut start = 0.0;
    let mut heat = 0.0;
    for &(temp, volume) in segments {
        let end = start + volume;
        let overlap = end.min(to) - start.max(from);
        if overlap > 0.0 {
            heat += temp * overlap;
        }
        start = end;
    }
    heat / (to - from)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn lossless() -> TankParams {
        TankParams {
            loss_coefficient: 0.0,
            ..TankParams::default()
        }
    }

    #[test]
    fn override_branches() {
        assert!(backup_override(44.0, false, 45.0, 55.0));
        assert!(backup_override(45.0, false, 45.0, 55.0));
        assert!(backup_override(50.0, true, 45.0, 55.0));
        assert!(!backup_override(50.0, false, 45.0, 55.0));
        assert!(!backup_override(55.0, true, 45.0, 55.0));
    }

    #[test]
    fn sensor_is_layer_midpoint() {
        assert_eq!(sensor_temp(&TankState::uniform(50.0)), 50.0);
        let s = |l, u| TankState {
            temp_lower: l,
            temp_upper: u,
            heater_on: false,
        };
        assert_eq!(sensor_temp(&s(40.0, 60.0)), 50.0);
        assert_eq!(sensor_temp(&s(45.0, 55.0)), 50.0);
    }

    #[test]
    fn heating_one_quarter() {
        let p = lossless();
        let (next, e) = step(&TankState::uniform(50.0), &p, true, 0.0, 15.0).unwrap();
        // 2.4 kW for 900 s into 100 L; mixing then spreads it over both layers.
        let delta_lower = 2400.0 * 900.0 / (100.0 * 4186.0);
        assert_relative_eq!(delta_lower, 5.16, epsilon = 0.005);
        assert_relative_eq!(e, 0.6, epsilon = 1e-12);
        assert_relative_eq!(next.temp_lower, 50.0 + delta_lower / 2.0, epsilon = 1e-12);
        assert_relative_eq!(next.temp_upper, next.temp_lower, epsilon = 1e-12);
    }

    #[test]
    fn heating_a_cold_lower_layer_keeps_stratification() {
        let p = lossless();
        let s = TankState {
            temp_lower: 40.0,
            temp_upper: 60.0,
            heater_on: false,
        };
        let (next, _) = step(&s, &p, true, 0.0, 15.0).unwrap();
        assert_relative_eq!(
            next.temp_lower,
            40.0 + 2400.0 * 900.0 / 418_600.0,
            epsilon = 1e-12
        );
        assert_eq!(next.temp_upper, 60.0);
    }

    #[test]
    fn idle_lossless_tank_is_unchanged() {
        let p = lossless();
        let s = TankState {
            temp_lower: 48.0,
            temp_upper: 52.0,
            heater_on: false,
        };
        let (next, e) = step(&s, &p, false, 0.0, 15.0).unwrap();
        assert_eq!((next.temp_lower, next.temp_upper, e), (48.0, 52.0, 0.0));
    }

    #[test]
    fn plug_flow_draw() {
        let p = lossless();
        let s = TankState {
            temp_lower: 40.0,
            temp_upper: 60.0,
            heater_on: false,
        };
        let (next, _) = step(&s, &p, false, 10.0, 15.0).unwrap();
        assert_relative_eq!(next.temp_upper, 58.0, epsilon = 1e-12);
        assert_relative_eq!(next.temp_lower, 37.2, epsilon = 1e-12);
    }

    #[test]
    fn draw_larger_than_upper_layer() {
        let p = lossless();
        let s = TankState {
            temp_lower: 40.0,
            temp_upper: 60.0,
            heater_on: false,
        };
        let (next, _) = step(&s, &p, false, 150.0, 15.0).unwrap();
        // Column after shift: 150 L inlet, then 100 L at 40 (50 L survive).
        assert_relative_eq!(next.temp_lower, 12.0, epsilon = 1e-12);
        assert_relative_eq!(
            next.temp_upper,
            (50.0 * 12.0 + 50.0 * 40.0) / 100.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_bad_draws() {
        let p = TankParams::default();
        let s = TankState::uniform(50.0);
        assert!(step(&s, &p, false, -1.0, 15.0).is_err());
        assert!(step(&s, &p, false, 200.5, 15.0).is_err());
        assert!(step(&s, &p, false, f64::NAN, 15.0).is_err());
        assert!(step(&s, &p, false, 200.0, 15.0).is_ok());
    }

    #[test]
    fn params_validation() {
        assert!(TankParams::default().validate().is_ok());
        let bad = TankParams {
            t_min: 55.0,
            t_max: 55.0,
            ..TankParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = TankParams {
            volume_upper: 0.0,
            ..TankParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = TankParams {
            loss_coefficient: -0.1,
            ..TankParams::default()
        };
        assert!(bad.validate().is_err());
    }

    fn arb_state() -> impl Strategy<Value = TankState> {
        (12.0f64..90.0, 12.0f64..90.0).prop_map(|(a, b)| TankState {
            temp_lower: a.min(b),
            temp_upper: a.max(b),
            heater_on: false,
        })
    }

    proptest! {
        #[test]
        fn lossless_heating_conserves_energy(s in arb_state(), on in any::<bool>()) {
            let p = lossless();
            let (next, e) = step(&s, &p, on, 0.0, 15.0).unwrap();
            let gained = next.stored_energy(&p) - s.stored_energy(&p);
            prop_assert!((gained - e).abs() <= 1e-9 * s.stored_energy(&p).max(e));
        }

        #[test]
        fn layers_stay_stratified(
            s in arb_state(),
            on in any::<bool>(),
            draw in 0.0f64..200.0,
            ua in 0.0f64..5.0,
        ) {
            let p = TankParams { loss_coefficient: ua, ..TankParams::default() };
            let (next, _) = step(&s, &p, on, draw, 15.0).unwrap();
            prop_assert!(next.temp_lower <= next.temp_upper);
        }

        #[test]
        fn heating_never_cools(s in arb_state(), draw in 0.0f64..50.0) {
            let p = lossless();
            let (off, _) = step(&s, &p, false, draw, 15.0).unwrap();
            let (on, _) = step(&s, &p, true, draw, 15.0).unwrap();
            prop_assert!(on.temp_lower >= off.temp_lower - 1e-12);
            prop_assert!(on.temp_upper >= off.temp_upper - 1e-12);
        }

        #[test]
        fn draws_never_add_energy(s in arb_state(), draw in 0.0f64..200.0) {
            let p = lossless();
            let (next, _) = step(&s, &p, false, draw, 15.0).unwrap();
            prop_assert!(next.stored_energy(&p) <= s.stored_energy(&p) + 1e-9);
        }
    }
}
