//! Electric water heater (EWH) demand response under a capacity-based
//! distribution tariff.
//!
//! The crate bundles the physical plant ([`thermal`]), tariff settlement
//! ([`tariff`]), the control environment ([`env`]), a small dense network
//! core ([`nn`]), PPO agents ([`agents`]), reference controllers
//! ([`baselines`]), dataset handling ([`data`]) and the pre-train / test
//! experiment protocol ([`experiment`]).

pub mod agents;
pub mod baselines;
pub mod config;
pub mod data;
pub mod env;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod tariff;
pub mod thermal;

pub use error::{Error, Result};

/// Length of one control step in hours.
pub const DT_HOURS: f64 = 0.25;
/// Control steps per day.
pub const QUARTERS_PER_DAY: usize = 96;
/// Days in the simulation year (fixed, non-leap).
pub const DAYS_PER_YEAR: usize = 365;
/// Control steps per simulation year.
pub const QUARTERS_PER_YEAR: usize = QUARTERS_PER_DAY * DAYS_PER_YEAR;
