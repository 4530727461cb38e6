//! Pre-train / test protocol: pre-train RL agents on a synthetic year,
//! transfer the parameters, run every controller on every house for every
//! seed, and summarize the runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agents::{ActorVariant, PolicyParams, PpoAgent};
use crate::baselines::{check_rbc_hour, rbc_action, Hysteresis, RBC_HOURS};
use crate::config::Config;
use crate::data::YearDataset;
use crate::env::{EwhEnv, TraceRow};
use crate::tariff::{self, Bill, BillingLedger, Prices, MONTH_NAMES};
use crate::{Error, Result, DT_HOURS, QUARTERS_PER_YEAR};

/// Comfort floor below the lower temperature bound, K.
pub const COMFORT_MARGIN: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Controller {
    Hc,
    /// Fixed four-hour window starting at the given hour.
    Rbc(usize),
    RlExpert,
    RlPlain,
}

impl Controller {
    pub fn variant(self) -> Option<ActorVariant> {
        match self {
            Controller::RlExpert => Some(ActorVariant::Expert),
            Controller::RlPlain => Some(ActorVariant::NonExpert),
            _ => None,
        }
    }

    /// Filesystem-safe form used in report file names.
    pub fn file_tag(self) -> String {
        self.to_string().replace(':', "-")
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Controller::Hc => f.write_str("hc"),
            Controller::Rbc(h) => write!(f, "rbc:{h}"),
            Controller::RlExpert => f.write_str("rl-expert"),
            Controller::RlPlain => f.write_str("rl-plain"),
        }
    }
}

impl FromStr for Controller {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hc" => Ok(Controller::Hc),
            "rl-expert" => Ok(Controller::RlExpert),
            "rl-plain" => Ok(Controller::RlPlain),
            _ => {
                let hour = s
                    .strip_prefix("rbc:")
                    .or_else(|| s.strip_prefix("rbc-"))
                    .and_then(|h| h.parse::<usize>().ok())
                    .filter(|&h| h < 24)
                    .ok_or_else(|| {
                        Error::domain(format!(
                            "unknown controller {s:?} (expected hc, rbc:<hour>, rl-expert or rl-plain)"
                        ))
                    })?;
                check_rbc_hour(hour);
                Ok(Controller::Rbc(hour))
            }
        }
    }
}

impl Serialize for Controller {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Controller {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub pretrain_years: usize,
    pub test_years: usize,
    /// One repeat per seed.
    pub seeds: Vec<u64>,
    pub controllers: Vec<Controller>,
    /// Keep training RL agents during the test phase.
    pub online_learning: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        let mut controllers = vec![Controller::Hc];
        controllers.extend(RBC_HOURS.iter().map(|&h| Controller::Rbc(h)));
        controllers.extend([Controller::RlExpert, Controller::RlPlain]);
        Self {
            pretrain_years: 3,
            test_years: 1,
            seeds: (1..=5).collect(),
            controllers,
            online_learning: true,
        }
    }
}

impl ExperimentPlan {
    /// Full-length protocol: 15 pre-training years and 10 repeats.
    pub fn full() -> Self {
        Self {
            pretrain_years: 15,
            seeds: (1..=10).collect(),
            ..Self::default()
        }
    }

    pub fn repeats(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.test_years == 0 {
            return Err(Error::domain("test_years must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::domain("the plan needs at least one seed"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::domain("seeds must be distinct"));
        }
        Ok(())
    }
}

/// Stream ids keep the random sequences of different run roles apart.
fn role_rng(seed: u64, role: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // FNV-1a of the role name.
    let stream = role.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainOutcome {
    pub params: PolicyParams,
    /// Mean reward of each pre-training year.
    pub year_rewards: Vec<f64>,
}

/// Initialize an agent from `seed` and train it for `pretrain_years` years
/// by cycling `data`.
pub fn pretrain(
    cfg: &Config,
    variant: ActorVariant,
    data: &YearDataset,
    seed: u64,
) -> Result<PretrainOutcome> {
    data.validate()?;
    let mut rng = role_rng(seed, &format!("pretrain/{variant:?}"));
    let mut agent = PpoAgent::new(variant, cfg.t_min, cfg.t_max, cfg.ppo(), &mut rng)?;
    let years = cfg.pretrain_years;
    if years == 0 {
        return Ok(PretrainOutcome {
            params: agent.params(),
            year_rewards: Vec::new(),
        });
    }
    let mut env = EwhEnv::new(
        &data.records,
        cfg.tank(),
        cfg.env(data.peak_pv()),
        cfg.initial_state(),
        0,
        years * QUARTERS_PER_YEAR,
    )?;
    agent.run(&mut env, &mut rng, true)?;
    let year_rewards = env
        .rewards()
        .chunks(QUARTERS_PER_YEAR)
        .map(|y| y.iter().sum::<f64>() / y.len() as f64)
        .collect();
    Ok(PretrainOutcome {
        params: agent.params(),
        year_rewards,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MonthReport {
    pub month: String,
    /// Highest quarter-hour grid off-take, kW.
    pub p_max: f64,
    pub ewh_kwh: f64,
    pub self_consumed_kwh: f64,
    pub self_consumption_ratio: f64,
    pub grid_kwh: f64,
    pub pv_kwh: f64,
    pub load_kwh: f64,
    pub dhw_l: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct YearReport {
    pub mmp: f64,
    pub bill: Bill,
    pub prices: Prices,
    pub ewh_kwh: f64,
    pub self_consumed_kwh: f64,
    pub self_consumption_ratio: f64,
    pub grid_kwh: f64,
    pub pv_kwh: f64,
    pub load_kwh: f64,
    pub dhw_l: f64,
    pub mean_reward: f64,
    /// Quarters with the heater commanded on.
    pub commanded_on: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComfortReport {
    pub floor_temp: f64,
    pub quarters: usize,
    pub quarters_above_floor: usize,
    pub fraction_above_floor: f64,
    pub min_sensor_temp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub controller: Controller,
    pub house: String,
    pub seed: u64,
    /// Set when the run diverged; such runs carry no metrics and are left
    /// out of comparisons.
    pub failure: Option<String>,
    pub months: Vec<MonthReport>,
    pub year: YearReport,
    pub comfort: ComfortReport,
    /// Mean reward per training iteration (per horizon for baselines)
    /// over the whole test phase.
    pub iteration_rewards: Vec<f64>,
    /// Mean reward per pre-training year; empty for baselines.
    pub pretrain_rewards: Vec<f64>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

impl RunReport {
    pub fn failed(controller: Controller, house: &str, seed: u64, msg: impl Into<String>) -> Self {
        Self {
            controller,
            house: house.to_string(),
            seed,
            failure: Some(msg.into()),
            months: Vec::new(),
            year: YearReport::default(),
            comfort: ComfortReport::default(),
            iteration_rewards: Vec::new(),
            pretrain_rewards: Vec::new(),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Build the metrics from one logged year that starts on 1 October.
    pub fn from_trace(
        controller: Controller,
        house: &str,
        seed: u64,
        year: &[TraceRow],
        prices: Prices,
        t_min: f64,
    ) -> Result<Self> {
        if year.len() != QUARTERS_PER_YEAR {
            return Err(Error::domain(format!(
                "a report needs one year of trace ({QUARTERS_PER_YEAR} rows), got {}",
                year.len()
            )));
        }
        let net: Vec<f64> = year.iter().map(|r| r.p_net).collect();
        let ledger = BillingLedger::from_net_power(&net, DT_HOURS, prices)?;
        let bill = tariff::yearly_bill(&ledger)?;

        let months = (0..MONTH_NAMES.len())
            .map(|m| {
                let rows = &year[tariff::month_range(m)];
                let mut mr = MonthReport {
                    month: MONTH_NAMES[m].to_string(),
                    p_max: ledger.monthly_peaks[m],
                    ..MonthReport::default()
                };
                for r in rows {
                    mr.ewh_kwh += r.p_ewh * DT_HOURS;
                    mr.self_consumed_kwh += r.p_sc * DT_HOURS;
                    mr.grid_kwh += r.p_net.max(0.0) * DT_HOURS;
                    mr.pv_kwh += r.p_pv * DT_HOURS;
                    mr.load_kwh += r.p_load * DT_HOURS;
                    mr.dhw_l += r.dhw_draw;
                }
                mr.self_consumption_ratio = ratio(mr.self_consumed_kwh, mr.ewh_kwh);
                mr
            })
            .collect::<Vec<_>>();

        let sum = |f: fn(&TraceRow) -> f64| year.iter().map(f).sum::<f64>();
        let ewh_kwh = sum(|r| r.p_ewh) * DT_HOURS;
        let self_consumed_kwh = sum(|r| r.p_sc) * DT_HOURS;
        let year_report = YearReport {
            mmp: bill.mmp,
            bill,
            prices,
            ewh_kwh,
            self_consumed_kwh,
            self_consumption_ratio: ratio(self_consumed_kwh, ewh_kwh),
            grid_kwh: ledger.total_energy,
            pv_kwh: sum(|r| r.p_pv) * DT_HOURS,
            load_kwh: sum(|r| r.p_load) * DT_HOURS,
            dhw_l: sum(|r| r.dhw_draw),
            mean_reward: sum(|r| r.reward) / year.len() as f64,
            commanded_on: year.iter().filter(|r| r.u).count(),
        };

        let floor_temp = t_min - COMFORT_MARGIN;
        let above = year.iter().filter(|r| r.sensor_temp >= floor_temp).count();
        let comfort = ComfortReport {
            floor_temp,
            quarters: year.len(),
            quarters_above_floor: above,
            fraction_above_floor: above as f64 / year.len() as f64,
            min_sensor_temp: year
                .iter()
                .map(|r| r.sensor_temp)
                .fold(f64::INFINITY, f64::min),
        };

        Ok(Self {
            controller,
            house: house.to_string(),
            seed,
            failure: None,
            months,
            year: year_report,
            comfort,
            iteration_rewards: Vec::new(),
            pretrain_rewards: Vec::new(),
        })
    }

    pub fn file_name(&self) -> String {
        report_file_name(self.controller, &self.house, self.seed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn report_file_name(controller: Controller, house: &str, seed: u64) -> String {
    format!("{}_{house}_{seed}.json", controller.file_tag())
}

/// A finished test phase: the report and the full step log.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub trace: Vec<TraceRow>,
}

/// How an RL controller starts the test phase.
#[derive(Debug, Clone, Copy)]
pub enum Start<'p> {
    /// Transferred parameters (with their pre-training reward trace).
    Params(&'p PolicyParams, &'p [f64]),
    /// Fresh random initialization from the run seed.
    Fresh,
}

/// Run `controller` through the test phase on `house`.
pub fn evaluate(
    cfg: &Config,
    controller: Controller,
    house: &YearDataset,
    seed: u64,
    start: Start<'_>,
) -> Result<RunOutput> {
    house.validate()?;
    let plan = cfg.plan();
    plan.validate()?;
    let tank = cfg.tank();
    let steps = plan.test_years * QUARTERS_PER_YEAR;
    let mut env = EwhEnv::new(
        &house.records,
        tank,
        cfg.env(house.peak_pv()),
        cfg.initial_state(),
        0,
        steps,
    )?
    .record_trace();
    let mut pretrain_rewards = Vec::new();

    match controller {
        Controller::Hc => {
            let mut hc = Hysteresis::new(tank.t_min, tank.t_max);
            while !env.is_exhausted() {
                let u = hc.act(crate::thermal::sensor_temp(env.state()));
                let (_, _, info) = env.step(u)?;
                hc.observe_applied(info.u_phys);
            }
        }
        Controller::Rbc(hour) => {
            check_rbc_hour(hour);
            while !env.is_exhausted() {
                let t = env.observe().t;
                env.step(rbc_action(t, hour))?;
            }
        }
        Controller::RlExpert | Controller::RlPlain => {
            let variant = controller.variant().expect("RL controller");
            let mut rng = role_rng(seed, &format!("test/{controller}/{}", house.label));
            let mut agent = match start {
                Start::Params(params, rewards) => {
                    if params.actor.variant() != variant {
                        return Err(Error::domain(format!(
                            "{controller} cannot start from {:?} actor parameters",
                            params.actor.variant()
                        )));
                    }
                    pretrain_rewards = rewards.to_vec();
                    PpoAgent::from_params(params.clone(), cfg.ppo())?
                }
                Start::Fresh => {
                    warn!(
                        "{controller} on {} starts from a fresh initialization",
                        house.label
                    );
                    PpoAgent::new(variant, tank.t_min, tank.t_max, cfg.ppo(), &mut rng)?
                }
            };
            agent.run(&mut env, &mut rng, plan.online_learning)?;
        }
    }

    let iteration_rewards = env
        .rewards()
        .chunks(cfg.horizon)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let trace = env.into_trace().expect("trace was enabled");
    let last_year = &trace[trace.len() - QUARTERS_PER_YEAR..];
    let mut report = RunReport::from_trace(
        controller,
        &house.label,
        seed,
        last_year,
        cfg.prices(),
        tank.t_min,
    )?;
    report.iteration_rewards = iteration_rewards;
    report.pretrain_rewards = pretrain_rewards;
    Ok(RunOutput { report, trace })
}

/// Every controller × house × seed of the plan. Pre-training happens once
/// per RL variant and seed and is shared across houses. Runs execute in
/// parallel; the result order is controller, house, seed as listed.
pub fn run_plan(
    cfg: &Config,
    pretrain_data: &YearDataset,
    houses: &[YearDataset],
) -> Result<Vec<RunReport>> {
    let plan = cfg.plan();
    plan.validate()?;

    let pretrain_jobs: Vec<(ActorVariant, u64)> = plan
        .controllers
        .iter()
        .filter_map(|c| c.variant())
        .flat_map(|v| plan.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pretrained: BTreeMap<(ActorVariant, u64), std::result::Result<PretrainOutcome, String>> =
        pretrain_jobs
            .par_iter()
            .map(|&(v, s)| {
                (
                    (v, s),
                    pretrain(cfg, v, pretrain_data, s).map_err(|e| e.to_string()),
                )
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect();

    let mut jobs: Vec<(Controller, &YearDataset, u64)> = Vec::new();
    for &c in &plan.controllers {
        for h in houses {
            jobs.extend(plan.seeds.iter().map(|&s| (c, h, s)));
        }
    }
    let reports = jobs
        .par_iter()
        .map(|&(c, house, seed)| {
            let start = match c.variant() {
                None => Ok(Start::Fresh),
                Some(v) => match &pretrained[&(v, seed)] {
                    Ok(p) => Ok(Start::Params(&p.params, &p.year_rewards)),
                    Err(e) => Err(format!("pre-training diverged: {e}")),
                },
            };
            match start.and_then(|s| evaluate(cfg, c, house, seed, s).map_err(|e| e.to_string())) {
                Ok(out) => out.report,
                Err(msg) => {
                    warn!("{c} on {} with seed {seed} failed: {msg}", house.label);
                    RunReport::failed(c, &house.label, seed, msg)
                }
            }
        })
        .collect();
    Ok(reports)
}

pub fn write_reports(dir: &Path, reports: &[RunReport]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in reports {
        std::fs::write(dir.join(r.file_name()), r.to_json()?)?;
    }
    Ok(())
}

/// Load every `*.json` run report in `dir`, sorted by file name.
pub fn read_reports(dir: &Path) -> Result<Vec<RunReport>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Format {
                path: p.clone(),
                msg: format!("not a run report: {e}"),
            })
        })
        .collect()
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Relative change of `value` against `reference`, percent.
pub fn pct_delta(value: f64, reference: f64) -> Option<f64> {
    (reference != 0.0).then(|| 100.0 * (value - reference) / reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Deltas {
    pub bill_pct: Option<f64>,
    pub mmp_pct: Option<f64>,
    pub self_consumption_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub controller: Controller,
    pub house: String,
    pub runs: usize,
    pub bill_mean: f64,
    pub bill_std: f64,
    pub mmp_mean: f64,
    pub mmp_std: f64,
    pub self_consumption_mean: f64,
    pub self_consumption_std: f64,
    pub vs_hc: Deltas,
    /// Against the house's best rule-based window, when one was run.
    pub vs_best_rbc: Option<Deltas>,
}

/// Per-controller averages over houses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub controller: Controller,
    pub houses: usize,
    pub bill_mean: f64,
    /// Across-seed bill deviation, averaged over houses.
    pub bill_std: f64,
    pub mmp_mean: f64,
    pub self_consumption_mean: f64,
    pub vs_hc: Deltas,
    pub vs_best_rbc: Option<Deltas>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<ControllerSummary>,
    /// Best rule-based window per house (lowest mean bill).
    pub best_rbc: BTreeMap<String, Controller>,
    /// Failed runs left out of the table.
    pub excluded: Vec<String>,
}

struct Group {
    bills: Vec<f64>,
    mmps: Vec<f64>,
    scrs: Vec<f64>,
}

fn deltas(row: &ComparisonRow, reference: &ComparisonRow) -> Deltas {
    Deltas {
        bill_pct: pct_delta(row.bill_mean, reference.bill_mean),
        mmp_pct: pct_delta(row.mmp_mean, reference.mmp_mean),
        self_consumption_pct: pct_delta(row.self_consumption_mean, reference.self_consumption_mean),
    }
}

fn mean_some(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn average_deltas<'a>(ds: impl Iterator<Item = &'a Deltas> + Clone) -> Deltas {
    Deltas {
        bill_pct: mean_some(ds.clone().map(|d| d.bill_pct)),
        mmp_pct: mean_some(ds.clone().map(|d| d.mmp_pct)),
        self_consumption_pct: mean_some(ds.map(|d| d.self_consumption_pct)),
    }
}

/// Aggregate run reports into per-house and averaged deltas against the
/// hysteresis controller and the best rule-based window.
pub fn compare(reports: &[RunReport]) -> Result<ComparisonTable> {
    let mut groups: BTreeMap<(String, Controller), Group> = BTreeMap::new();
    let mut excluded = Vec::new();
    for r in reports {
        if let Some(msg) = &r.failure {
            excluded.push(format!("{}: {msg}", r.file_name()));
            continue;
        }
        let g = groups
            .entry((r.house.clone(), r.controller))
            .or_insert(Group {
                bills: Vec::new(),
                mmps: Vec::new(),
                scrs: Vec::new(),
            });
        g.bills.push(r.year.bill.total);
        g.mmps.push(r.year.mmp);
        g.scrs.push(r.year.self_consumption_ratio);
    }

    let houses: BTreeSet<String> = groups.keys().map(|(h, _)| h.clone()).collect();
    if houses.is_empty() {
        return Err(Error::domain("no successful runs to compare"));
    }
    let mut rows: Vec<ComparisonRow> = groups
        .iter()
        .map(|((house, c), g)| {
            let (bill_mean, bill_std) = mean_std(&g.bills);
            let (mmp_mean, mmp_std) = mean_std(&g.mmps);
            let (scr_mean, scr_std) = mean_std(&g.scrs);
            ComparisonRow {
                controller: *c,
                house: house.clone(),
                runs: g.bills.len(),
                bill_mean,
                bill_std,
                mmp_mean,
                mmp_std,
                self_consumption_mean: scr_mean,
                self_consumption_std: scr_std,
                vs_hc: Deltas::default(),
                vs_best_rbc: None,
            }
        })
        .collect();

    let mut best_rbc = BTreeMap::new();
    let mut references = BTreeMap::new();
    for house in &houses {
        let hc = rows
            .iter()
            .find(|r| &r.house == house && r.controller == Controller::Hc)
            .cloned()
            .ok_or_else(|| Error::domain(format!("house {house} has no hc reference run")))?;
        let rbc = rows
            .iter()
            .filter(|r| &r.house == house && matches!(r.controller, Controller::Rbc(_)))
            .min_by(|a, b| a.bill_mean.total_cmp(&b.bill_mean))
            .cloned();
        if let Some(r) = &rbc {
            best_rbc.insert(house.clone(), r.controller);
        }
        references.insert(house.clone(), (hc, rbc));
    }
    for row in &mut rows {
        let (hc, rbc) = &references[&row.house];
        row.vs_hc = deltas(row, hc);
        row.vs_best_rbc = rbc.as_ref().map(|r| deltas(row, r));
    }

    let controllers: BTreeSet<Controller> = rows.iter().map(|r| r.controller).collect();
    let summary = controllers
        .into_iter()
        .map(|c| {
            let rs: Vec<&ComparisonRow> = rows.iter().filter(|r| r.controller == c).collect();
            let n = rs.len() as f64;
            let avg = |f: fn(&ComparisonRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let rbc: Vec<&Deltas> = rs.iter().filter_map(|r| r.vs_best_rbc.as_ref()).collect();
            ControllerSummary {
                controller: c,
                houses: rs.len(),
                bill_mean: avg(|r| r.bill_mean),
                bill_std: avg(|r| r.bill_std),
                mmp_mean: avg(|r| r.mmp_mean),
                self_consumption_mean: avg(|r| r.self_consumption_mean),
                vs_hc: average_deltas(rs.iter().map(|r| &r.vs_hc)),
                vs_best_rbc: (!rbc.is_empty()).then(|| average_deltas(rbc.iter().copied())),
            }
        })
        .collect();

    Ok(ComparisonTable {
        rows,
        summary,
        best_rbc,
        excluded,
    })
}

impl ComparisonTable {
    pub fn row(&self, controller: Controller, house: &str) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.controller == controller && r.house == house)
    }

    pub fn summary_for(&self, controller: Controller) -> Option<&ControllerSummary> {
        self.summary.iter().find(|s| s.controller == controller)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One CSV line per controller and house; empty cells for undefined
    /// deltas.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "controller",
            "house",
            "runs",
            "bill_mean",
            "bill_std",
            "mmp_mean",
            "mmp_std",
            "self_consumption_mean",
            "self_consumption_std",
            "bill_vs_hc_pct",
            "mmp_vs_hc_pct",
            "self_consumption_vs_hc_pct",
            "bill_vs_best_rbc_pct",
            "mmp_vs_best_rbc_pct",
            "self_consumption_vs_best_rbc_pct",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            let rbc = r.vs_best_rbc.unwrap_or_default();
            w.write_record([
                r.controller.to_string(),
                r.house.clone(),
                r.runs.to_string(),
                format!("{:.6}", r.bill_mean),
                format!("{:.6}", r.bill_std),
                format!("{:.6}", r.mmp_mean),
                format!("{:.6}", r.mmp_std),
                format!("{:.6}", r.self_consumption_mean),
                format!("{:.6}", r.self_consumption_std),
                opt(r.vs_hc.bill_pct),
                opt(r.vs_hc.mmp_pct),
                opt(r.vs_hc.self_consumption_pct),
                opt(rbc.bill_pct),
                opt(rbc.mmp_pct),
                opt(rbc.self_consumption_pct),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Correlation between the final pre-training year's mean reward and the
/// test-year mean reward across seeds, computed per house and averaged.
/// Houses with fewer than three usable runs or zero variance are skipped;
/// `None` when no house qualifies.
pub fn pretrain_test_correlation(reports: &[RunReport]) -> Option<f64> {
    let mut by_house: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in reports.iter().filter(|r| !r.is_failed()) {
        if let Some(&last) = r.pretrain_rewards.last() {
            let e = by_house.entry(&r.house).or_default();
            e.0.push(last);
            e.1.push(r.year.mean_reward);
        }
    }
    let rs: Vec<f64> = by_house
        .values()
        .filter(|(x, _)| x.len() >= 3)
        .filter_map(|(x, y)| pearson(x, y))
        .collect();
    (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
}
