//! Quarter-hourly household datasets: CSV ingestion and a seeded synthetic
//! generator for PV production, inflexible load and hot water draws.
//!
//! Every dataset covers one fixed non-leap year starting on 1 October.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::QuarterRecord;
use crate::{Error, Result, DAYS_PER_YEAR, DT_HOURS, QUARTERS_PER_DAY, QUARTERS_PER_YEAR};

pub const CSV_HEADER: [&str; 4] = ["quarter", "pv_kw", "load_kw", "dhw_l"];

/// Upper sanity bound on annual PV production, kWh.
const MAX_ANNUAL_PV_KWH: f64 = 20_000.0;

/// Day of year (0 = 1 January) of 1 October in a non-leap year.
const START_DAY_OF_YEAR: usize = 273;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearDataset {
    pub label: String,
    pub records: Vec<QuarterRecord>,
}

impl YearDataset {
    pub fn new(label: impl Into<String>, records: Vec<QuarterRecord>) -> Result<Self> {
        let ds = Self {
            label: label.into(),
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.len() != QUARTERS_PER_YEAR {
            return Err(Error::domain(format!(
                "a year holds {QUARTERS_PER_YEAR} quarters, got {}",
                self.records.len()
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            if let Some(msg) = check_record(r) {
                return Err(Error::domain(format!("quarter {i}: {msg}")));
            }
        }
        let pv = dataset_metrics(self).annual_pv_kwh;
        if pv > MAX_ANNUAL_PV_KWH {
            return Err(Error::domain(format!(
                "annual PV of {pv:.0} kWh exceeds the {MAX_ANNUAL_PV_KWH} kWh sanity bound"
            )));
        }
        Ok(())
    }

    /// Largest PV power in the year, kW.
    pub fn peak_pv(&self) -> f64 {
        self.records.iter().fold(0.0f64, |m, r| m.max(r.pv_power))
    }
}

fn check_record(r: &QuarterRecord) -> Option<String> {
    for (name, v) in [
        ("pv_kw", r.pv_power),
        ("load_kw", r.load_power),
        ("dhw_l", r.dhw_draw),
    ] {
        if !v.is_finite() {
            return Some(format!("{name} is not a finite number"));
        }
        if v < 0.0 {
            return Some(format!("{name} is negative ({v})"));
        }
    }
    None
}

/// Parse a dataset from CSV text with header `quarter,pv_kw,load_kw,dhw_l`.
/// Row numbers in errors count data rows from 1.
pub fn read_csv<R: Read>(input: R, path: &Path) -> Result<YearDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let mut columns = [0usize; 4];
    for (slot, name) in columns.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                msg: format!(
                    "missing column {name:?} (expected header {})",
                    CSV_HEADER.join(",")
                ),
            })?;
    }

    let mut records = Vec::with_capacity(QUARTERS_PER_YEAR);
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: row_no,
            msg: e.to_string(),
        })?;
        let field = |col: usize| -> Result<&str> {
            row.get(col).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row: row_no,
                msg: format!(
                    "missing field {:?}",
                    CSV_HEADER[columns.iter().position(|&c| c == col).unwrap()]
                ),
            })
        };
        let number = |k: usize| -> Result<f64> {
            let text = field(columns[k])?;
            text.parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: row_no,
                msg: format!("{} is not a number: {text:?}", CSV_HEADER[k]),
            })
        };
        let quarter = field(columns[0])?
            .parse::<usize>()
            .map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: row_no,
                msg: "quarter is not a non-negative integer".into(),
            })?;
        if quarter != i {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: row_no,
                msg: format!("expected quarter {i}, found {quarter}"),
            });
        }
        let rec = QuarterRecord {
            pv_power: number(1)?,
            load_power: number(2)?,
            dhw_draw: number(3)?,
        };
        if let Some(msg) = check_record(&rec) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: row_no,
                msg,
            });
        }
        records.push(rec);
    }
    if records.len() != QUARTERS_PER_YEAR {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!(
                "expected {QUARTERS_PER_YEAR} data rows, found {}",
                records.len()
            ),
        });
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ds = YearDataset { label, records };
    ds.validate().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(ds)
}

pub fn load_csv(path: &Path) -> Result<YearDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), path)
}

/// Write a dataset as CSV; values carry six decimals.
pub fn write_csv<W: Write>(out: W, ds: &YearDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for (i, r) in ds.records.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:.6}", r.pv_power),
            format!("{:.6}", r.load_power),
            format!("{:.6}", r.dhw_draw),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: &Path, ds: &YearDataset) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub dhw_l_per_day: f64,
    pub annual_load_kwh: f64,
    pub annual_pv_kwh: f64,
}

pub fn dataset_metrics(ds: &YearDataset) -> DatasetMetrics {
    summarize(&ds.records)
}

/// Metrics of any run of whole days.
pub fn summarize(records: &[QuarterRecord]) -> DatasetMetrics {
    let days = records.len() as f64 / QUARTERS_PER_DAY as f64;
    let (mut dhw, mut load, mut pv) = (0.0, 0.0, 0.0);
    for r in records {
        dhw += r.dhw_draw;
        load += r.load_power * DT_HOURS;
        pv += r.pv_power * DT_HOURS;
    }
    DatasetMetrics {
        dhw_l_per_day: if days > 0.0 { dhw / days } else { 0.0 },
        annual_load_kwh: load,
        annual_pv_kwh: pv,
    }
}

/// Parameters of a synthetic household year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    /// PV array size, also used as the inverter rating, kW.
    pub pv_kwp: f64,
    /// Annual specific yield, kWh/kWp.
    #[serde(default = "default_yield")]
    pub pv_yield: f64,
    pub daily_load_kwh: f64,
    pub daily_dhw_l: f64,
    /// Cap on hot water drawn in a single quarter, L.
    #[serde(default = "default_max_draw")]
    pub max_draw_l: f64,
}

fn default_yield() -> f64 {
    950.0
}

fn default_max_draw() -> f64 {
    12.0
}

impl Default for SynthProfile {
    fn default() -> Self {
        fixture("training")
            .expect("bundled training profile")
            .profile
    }
}

impl SynthProfile {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.pv_kwp,
            self.pv_yield,
            self.daily_load_kwh,
            self.daily_dhw_l,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain(format!(
                "profile values must be non-negative: {self:?}"
            )));
        }
        if !(self.max_draw_l > 0.0) {
            return Err(Error::domain("max_draw_l must be positive"));
        }
        if self.daily_dhw_l > self.max_draw_l * QUARTERS_PER_DAY as f64 {
            return Err(Error::domain(
                "daily hot water exceeds what the draw cap allows",
            ));
        }
        Ok(())
    }

    pub fn annual_pv_target(&self) -> f64 {
        self.pv_kwp * self.pv_yield
    }
}

/// A named profile with the seed of its bundled fixture year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureProfile {
    pub seed: u64,
    #[serde(flatten)]
    pub profile: SynthProfile,
}

const FIXTURES_TOML: &str = include_str!("../../../fixtures/houses.toml");

/// All bundled profiles by name.
pub fn fixtures() -> BTreeMap<String, FixtureProfile> {
    toml::from_str(FIXTURES_TOML).expect("bundled fixtures parse")
}

pub fn fixture(name: &str) -> Option<FixtureProfile> {
    fixtures().remove(name)
}

/// The five test-household fixtures, in order.
pub fn fixture_houses() -> Vec<(String, FixtureProfile)> {
    fixtures()
        .into_iter()
        .filter(|(name, _)| name.starts_with("house"))
        .collect()
}

/// Generate one synthetic year. Deterministic in `(seed, profile)`.
pub fn synth_year(
    seed: u64,
    profile: &SynthProfile,
    label: impl Into<String>,
) -> Result<YearDataset> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pv = synth_pv(&mut rng, profile);
    let load = synth_load(&mut rng, profile);
    let dhw = synth_dhw(&mut rng, profile);
    let records = pv
        .into_iter()
        .zip(load)
        .zip(dhw)
        .map(|((pv_power, load_power), dhw_draw)| QuarterRecord {
            pv_power,
            load_power,
            dhw_draw,
        })
        .collect();
    YearDataset::new(label, records)
}

/// Day of year (0 = 1 January) of simulation day `day`.
fn day_of_year(day: usize) -> usize {
    (START_DAY_OF_YEAR + day) % DAYS_PER_YEAR
}

/// +1 at the June solstice, −1 at the December solstice.
fn season(day: usize) -> f64 {
    (TAU * (day_of_year(day) as f64 - 80.0) / DAYS_PER_YEAR as f64).sin()
}

fn hour_of(q: usize) -> f64 {
    (q as f64 + 0.5) * 24.0 / QUARTERS_PER_DAY as f64
}

/// Clear-sky half-sine over the day, seasonal amplitude and day length,
/// multiplicative cloud noise; scaled to the annual yield, clipped to the
/// inverter rating.
fn synth_pv(rng: &mut ChaCha8Rng, p: &SynthProfile) -> Vec<f64> {
    let mut out = vec![0.0; QUARTERS_PER_YEAR];
    if p.pv_kwp == 0.0 || p.pv_yield == 0.0 {
        return out;
    }
    let clearness = Beta::new(2.2, 1.3).expect("valid beta");
    let jitter = Normal::<f64>::new(0.0, 1.0).expect("valid normal");
    let mut noise = 0.0;
    for day in 0..DAYS_PER_YEAR {
        let s = season(day);
        let day_length = 12.0 + 4.2 * s;
        let noon = 13.5;
        let sunrise = noon - day_length / 2.0;
        let amplitude = 0.65 + 0.35 * s;
        let k: f64 = clearness.sample(rng);
        let spread = 0.6 * (1.0 - k) * k.sqrt();
        for q in 0..QUARTERS_PER_DAY {
            noise = 0.8 * noise + 0.6 * jitter.sample(rng);
            let x = (hour_of(q) - sunrise) / day_length;
            if !(0.0..1.0).contains(&x) {
                continue;
            }
            let clear = amplitude * (PI * x).sin().powf(1.3);
            let cloud = (k + spread * noise).clamp(0.05, 1.0);
            out[day * QUARTERS_PER_DAY + q] = p.pv_kwp * clear * cloud;
        }
    }
    let produced: f64 = out.iter().sum::<f64>() * DT_HOURS;
    let scale = p.annual_pv_target() / produced;
    for v in &mut out {
        *v = (*v * scale).min(p.pv_kwp);
    }
    out
}

/// Base load, morning and evening bumps, and appliance events (cooking,
/// kettle, washing) that set the monthly peaks. Scaled to the annual target.
fn synth_load(rng: &mut ChaCha8Rng, p: &SynthProfile) -> Vec<f64> {
    let mut out = vec![0.0; QUARTERS_PER_YEAR];
    if p.daily_load_kwh == 0.0 {
        return out;
    }
    let wobble = Normal::<f64>::new(0.0, 0.08).expect("valid normal");
    for day in 0..DAYS_PER_YEAR {
        let winter = 1.0 - 0.15 * season(day);
        let day_level = (1.0 + wobble.sample(rng)).max(0.6);
        let base = &mut out[day * QUARTERS_PER_DAY..(day + 1) * QUARTERS_PER_DAY];
        for (q, v) in base.iter_mut().enumerate() {
            let h = hour_of(q);
            let morning = 0.35 * (-((h - 7.5) / 1.0).powi(2)).exp();
            let evening = 0.6 * (-((h - 19.5) / 2.0).powi(2)).exp();
            let midday = 0.15 * (-((h - 13.0) / 2.5).powi(2)).exp();
            *v = (0.18 + morning + midday + evening * winter) * day_level;
        }

        // Cooking around dinner time.
        if rng.random::<f64>() < 0.8 {
            let start = rng.random_range(68..80);
            let len = rng.random_range(2..5);
            let power = rng.random_range(1.2..2.8);
            for b in &mut base[start..(start + len).min(QUARTERS_PER_DAY)] {
                *b += power;
            }
        }
        // Kettle and toaster in the morning.
        if rng.random::<f64>() < 0.7 {
            let q = rng.random_range(26..36);
            base[q] += rng.random_range(0.6..1.6);
        }
        // Washing machine or dishwasher, any time during the day.
        if rng.random::<f64>() < 0.35 {
            let start = rng.random_range(36..84);
            let len = rng.random_range(3..7);
            let power = rng.random_range(0.8..1.8);
            for b in &mut base[start..(start + len).min(QUARTERS_PER_DAY)] {
                *b += power;
            }
        }
    }
    let produced: f64 = out.iter().sum::<f64>() * DT_HOURS;
    let scale = p.daily_load_kwh * DAYS_PER_YEAR as f64 / produced;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Draw events clustered in the morning and evening. Day totals vary around
/// the target and are normalized so the annual mean equals `daily_dhw_l`;
/// each quarter is capped at `max_draw_l`, with any excess spilling into
/// the following quarters.
fn synth_dhw(rng: &mut ChaCha8Rng, p: &SynthProfile) -> Vec<f64> {
    let mut out = vec![0.0; QUARTERS_PER_YEAR];
    if p.daily_dhw_l == 0.0 {
        return out;
    }
    let spread = Normal::<f64>::new(1.0, 0.25).expect("valid normal");
    let mut totals: Vec<f64> = (0..DAYS_PER_YEAR)
        .map(|_| spread.sample(rng).clamp(0.3, 2.0))
        .collect();
    let norm = p.daily_dhw_l * DAYS_PER_YEAR as f64 / totals.iter().sum::<f64>();
    totals.iter_mut().for_each(|t| *t *= norm);

    // (share of the day, first quarter, last quarter exclusive)
    const WINDOWS: [(f64, usize, usize); 3] = [(0.45, 24, 36), (0.15, 44, 68), (0.40, 72, 90)];
    for (day, &total) in totals.iter().enumerate() {
        let slots = &mut out[day * QUARTERS_PER_DAY..(day + 1) * QUARTERS_PER_DAY];
        for &(share, from, to) in &WINDOWS {
            let mut left = total * share;
            // Split into 1–3 events at random times inside the window.
            let events = rng.random_range(1..=3);
            for e in 0..events {
                let volume = if e + 1 == events {
                    left
                } else {
                    left * rng.random_range(0.3..0.7)
                };
                left -= volume;
                let start = rng.random_range(from..to);
                pour(slots, start, volume, p.max_draw_l);
            }
        }
    }
    out
}

fn pour(slots: &mut [f64], start: usize, mut volume: f64, cap: f64) {
    let n = slots.len();
    let mut q = start;
    let mut guard = 0;
    while volume > 1e-12 && guard < n {
        let room = (cap - slots[q]).max(0.0);
        let poured = volume.min(room);
        slots[q] += poured;
        volume -= poured;
        q = (q + 1) % n;
        guard += 1;
    }
}
