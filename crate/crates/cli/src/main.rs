//! `ewhrl`: generate data, pre-train agents, evaluate controllers and
//! compare the results.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use ewhrl::agents::{ActorVariant, PolicyParams};
use ewhrl::config::Config;
use ewhrl::data::{self, YearDataset};
use ewhrl::env::write_trace_csv;
use ewhrl::experiment::{self, Controller, Start};
use ewhrl::Error;

#[derive(Debug, Parser)]
#[command(
    name = "ewhrl",
    version,
    about = "Water heater demand response under a capacity tariff"
)]
struct Cli {
    /// Configuration file (defaults to $EWH_CONFIG, then built-in values).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic household year as CSV.
    GenData(GenData),
    /// Pre-train an RL agent on a synthetic year.
    Pretrain(Pretrain),
    /// Run one controller through a test year.
    Evaluate(Evaluate),
    /// Aggregate a directory of run reports.
    Compare(Compare),
    /// Full protocol over every controller, house and seed.
    Run(Run),
}

#[derive(Debug, Args)]
struct GenData {
    /// Generator seed (defaults to the profile's fixture seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Profile name from fixtures/houses.toml; `default` is the training profile.
    #[arg(long, default_value = "default")]
    profile: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Variant {
    Expert,
    Plain,
}

impl From<Variant> for ActorVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Expert => ActorVariant::Expert,
            Variant::Plain => ActorVariant::NonExpert,
        }
    }
}

#[derive(Debug, Args)]
struct Pretrain {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_params: PathBuf,
    #[arg(long, value_enum, default_value = "expert")]
    variant: Variant,
    /// Pre-training data CSV (defaults to the configured synthetic profile).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Per-year reward trace CSV (defaults to `<out-params>.stats.csv`).
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Evaluate {
    /// hc, rbc:<hour>, rl-expert or rl-plain.
    #[arg(long)]
    controller: String,
    #[arg(long)]
    house_csv: PathBuf,
    /// Pre-trained parameters for RL controllers.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-quarter step log as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Disable online learning during the test year.
    #[arg(long)]
    frozen: bool,
}

#[derive(Debug, Args)]
struct Compare {
    #[arg(long)]
    reports_dir: PathBuf,
    /// Output directory for comparison.json and comparison.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Run {
    /// Output directory for run reports and the comparison table.
    #[arg(long)]
    out: PathBuf,
    /// Directory of house CSVs (defaults to the bundled fixture houses).
    #[arg(long)]
    houses_dir: Option<PathBuf>,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite(_) | Error::EpisodeExhausted { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        msg: msg.into(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn profile_by_name(name: &str) -> Result<data::FixtureProfile, Failure> {
    let key = if name == "default" { "training" } else { name };
    data::fixture(key).ok_or_else(|| {
        let known: Vec<String> = data::fixtures().into_keys().collect();
        usage(format!(
            "unknown profile {name:?}; known: default, {}",
            known.join(", ")
        ))
    })
}

fn pretrain_data(cfg: &Config, path: Option<&Path>) -> Result<YearDataset, Failure> {
    match path {
        Some(p) => Ok(data::load_csv(p)?),
        None => {
            let f = profile_by_name(&cfg.pretrain_profile)?;
            Ok(data::synth_year(
                cfg.pretrain_data_seed,
                &f.profile,
                cfg.pretrain_profile.as_str(),
            )?)
        }
    }
}

fn gen_data(args: &GenData) -> Result<(), Failure> {
    let f = profile_by_name(&args.profile)?;
    let seed = args.seed.unwrap_or(f.seed);
    let ds = data::synth_year(seed, &f.profile, args.profile.as_str())?;
    let file =
        fs::File::create(&args.out).map_err(|e| usage(format!("{}: {e}", args.out.display())))?;
    data::write_csv(std::io::BufWriter::new(file), &ds)?;
    Ok(())
}

fn pretrain(cfg: &Config, args: &Pretrain) -> Result<(), Failure> {
    let ds = pretrain_data(cfg, args.data.as_deref())?;
    let outcome = experiment::pretrain(cfg, args.variant.into(), &ds, args.seed)?;
    write_file(&args.out_params, &outcome.params.to_json()?)?;
    let stats = args
        .stats
        .clone()
        .unwrap_or_else(|| args.out_params.with_extension("stats.csv"));
    let mut csv = String::from("year,mean_reward\n");
    for (i, r) in outcome.year_rewards.iter().enumerate() {
        csv.push_str(&format!("{},{r:.9}\n", i + 1));
    }
    write_file(&stats, &csv)
}

fn evaluate(cfg: &Config, args: &Evaluate) -> Result<(), Failure> {
    let controller: Controller = args.controller.parse()?;
    let mut ds = data::load_csv(&args.house_csv)?;
    if ds.label.is_empty() {
        ds.label = "house".into();
    }
    let params = match (&args.params, controller.variant()) {
        (Some(p), Some(_)) => Some(PolicyParams::load(p)?),
        (Some(_), None) => {
            warn!("--params is ignored for {controller}");
            None
        }
        (None, Some(_)) => {
            warn!("no --params given; {controller} starts from a fresh initialization");
            None
        }
        (None, None) => None,
    };
    let cfg = Config {
        online_learning: cfg.online_learning && !args.frozen,
        ..cfg.clone()
    };
    let start = match &params {
        Some(p) => Start::Params(p, &[]),
        None => Start::Fresh,
    };
    let out = experiment::evaluate(&cfg, controller, &ds, args.seed, start)?;
    write_file(&args.out, &out.report.to_json()?)?;
    if let Some(path) = &args.trace {
        let file = fs::File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        write_trace_csv(std::io::BufWriter::new(file), &out.trace)?;
    }
    Ok(())
}

fn write_comparison(dir: &Path, reports: &[experiment::RunReport]) -> Result<(), Failure> {
    let table = experiment::compare(reports)?;
    fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    write_file(&dir.join("comparison.json"), &table.to_json()?)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    write_file(&dir.join("comparison.csv"), &String::from_utf8_lossy(&csv))
}

fn compare(args: &Compare) -> Result<(), Failure> {
    let reports = experiment::read_reports(&args.reports_dir)?;
    write_comparison(&args.out, &reports)
}

fn run(cfg: &Config, args: &Run) -> Result<(), Failure> {
    let houses: Vec<YearDataset> = match &args.houses_dir {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| usage(format!("{}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            paths.sort();
            paths
                .iter()
                .map(|p| data::load_csv(p))
                .collect::<Result<_, _>>()?
        }
        None => data::fixture_houses()
            .into_iter()
            .map(|(name, f)| data::synth_year(f.seed, &f.profile, name))
            .collect::<Result<_, _>>()?,
    };
    if houses.is_empty() {
        return Err(usage("no house datasets found"));
    }
    let ds = pretrain_data(cfg, None)?;
    let reports = experiment::run_plan(cfg, &ds, &houses)?;
    let dir = args.out.join("reports");
    experiment::write_reports(&dir, &reports)?;
    write_comparison(&args.out, &reports)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = Config::resolve(cli.config.as_deref())
        .map_err(Failure::from)
        .and_then(|cfg| match &cli.command {
            Command::GenData(a) => gen_data(a),
            Command::Pretrain(a) => pretrain(&cfg, a),
            Command::Evaluate(a) => evaluate(&cfg, a),
            Command::Compare(a) => compare(a),
            Command::Run(a) => run(&cfg, a),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
