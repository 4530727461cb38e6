//! Capacity tariff settlement.
//!
//! The distribution fee is charged on the mean monthly peak (MMP): the
//! average over a 12-month window of each month's highest quarter-hour net
//! off-take, floored at 2.5 kW per month. Grid injection never counts.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, QUARTERS_PER_DAY};

/// Monthly peak floor, kW.
pub const PEAK_FLOOR_KW: f64 = 2.5;

/// Months in the MMP window.
pub const MMP_WINDOW: usize = 12;

/// Default capacity price, €/kW.
pub const DEFAULT_LAMBDA_CAP: f64 = 47.78;

/// Simulation calendar: a non-leap year starting on 1 October.
pub const MONTH_NAMES: [&str; 12] = [
    "Oct", "Nov", "Dec", "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep",
];
pub const MONTH_DAYS: [usize; 12] = [31, 30, 31, 31, 28, 31, 30, 31, 30, 31, 31, 30];

/// Quarter index range of calendar month `month` (0 = October).
pub fn month_range(month: usize) -> Range<usize> {
    let start_day: usize = MONTH_DAYS[..month].iter().sum();
    let start = start_day * QUARTERS_PER_DAY;
    start..start + MONTH_DAYS[month] * QUARTERS_PER_DAY
}

/// Calendar month (0 = October) of a quarter index within the year.
pub fn month_of_quarter(quarter: usize) -> usize {
    let mut day = quarter / QUARTERS_PER_DAY;
    for (m, &len) in MONTH_DAYS.iter().enumerate() {
        if day < len {
            return m;
        }
        day -= len;
    }
    MONTH_DAYS.len() - 1
}

/// Highest net off-take of a month, kW. Injection quarters count as zero.
pub fn monthly_peak(net_power: &[f64]) -> Result<f64> {
    if net_power.is_empty() {
        return Err(Error::domain("monthly peak of an empty series"));
    }
    Ok(net_power
        .iter()
        .fold(0.0f64, |peak, &p| peak.max(p.max(0.0))))
}

/// Monthly peaks of one calendar year of quarter-hourly net power.
pub fn monthly_peaks(net_power: &[f64]) -> Result<Vec<f64>> {
    let expected = month_range(MMP_WINDOW - 1).end;
    if net_power.len() != expected {
        return Err(Error::domain(format!(
            "yearly series must have {expected} quarters, got {}",
            net_power.len()
        )));
    }
    (0..MMP_WINDOW)
        .map(|m| monthly_peak(&net_power[month_range(m)]))
        .collect()
}

/// Mean monthly peak over a 12-month window, with the per-month floor.
pub fn mmp(peaks: &[f64]) -> Result<f64> {
    if peaks.len() != MMP_WINDOW {
        return Err(Error::domain(format!(
            "MMP window must hold {MMP_WINDOW} monthly peaks, got {}",
            peaks.len()
        )));
    }
    Ok(peaks.iter().map(|p| p.max(PEAK_FLOOR_KW)).sum::<f64>() / MMP_WINDOW as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    /// Capacity price, €/kW of MMP.
    pub lambda_cap: f64,
    /// Energy price, €/kWh.
    pub lambda_e: f64,
    /// Energy-proportional taxes, €/kWh.
    pub lambda_tax_e: f64,
    /// Fixed taxes, €/year.
    pub lambda_tax_fixed: f64,
}

impl Default for Prices {
    fn default() -> Self {
        Self {
            lambda_cap: DEFAULT_LAMBDA_CAP,
            lambda_e: 0.10,
            lambda_tax_e: 0.05,
            lambda_tax_fixed: 100.0,
        }
    }
}

impl Prices {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_cap,
            self.lambda_e,
            self.lambda_tax_e,
            self.lambda_tax_fixed,
        ];
        if all.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain(format!(
                "prices must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BillingLedger {
    pub monthly_peaks: Vec<f64>,
    /// Energy taken from the grid over the year, kWh.
    pub total_energy: f64,
    pub prices: Prices,
}

impl BillingLedger {
    /// Build a ledger from one year of quarter-hourly net power (kW).
    /// Billed energy is the grid off-take only.
    pub fn from_net_power(net_power: &[f64], dt_hours: f64, prices: Prices) -> Result<Self> {
        let monthly_peaks = monthly_peaks(net_power)?;
        let total_energy = net_power.iter().map(|p| p.max(0.0) * dt_hours).sum();
        Ok(Self {
            monthly_peaks,
            total_energy,
            prices,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bill {
    pub mmp: f64,
    pub energy: f64,
    pub capacity: f64,
    pub tax_energy: f64,
    pub tax_fixed: f64,
    pub total: f64,
}

pub fn yearly_bill(ledger: &BillingLedger) -> Result<Bill> {
    ledger.prices.validate()?;
    if !(ledger.total_energy >= 0.0) {
        return Err(Error::domain(format!(
            "billed energy must be non-negative, got {}",
            ledger.total_energy
        )));
    }
    if ledger.monthly_peaks.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::domain("monthly peaks must be non-negative"));
    }
    let window = ledger
        .monthly_peaks
        .len()
        .checked_sub(MMP_WINDOW)
        .map(|start| &ledger.monthly_peaks[start..])
        .ok_or_else(|| Error::domain("a yearly bill needs at least 12 monthly peaks"))?;
    let mmp = mmp(window)?;
    let p = &ledger.prices;
    let energy = p.lambda_e * ledger.total_energy;
    let capacity = p.lambda_cap * mmp;
    let tax_energy = p.lambda_tax_e * ledger.total_energy;
    let tax_fixed = p.lambda_tax_fixed;
    Ok(Bill {
        mmp,
        energy,
        capacity,
        tax_energy,
        tax_fixed,
        total: energy + capacity + tax_energy + tax_fixed,
    })
}
