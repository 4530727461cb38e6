//! Acceptance gate: one PASS/FAIL line per criterion.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ewhrl::agents::bandit::ContextualBandit;
use ewhrl::agents::{actor_loss, gae, Actor, ActorVariant, Critic, PpoAgent, PpoConfig, Sample};
use ewhrl::config::Config;
use ewhrl::data::{self, YearDataset};
use ewhrl::env::{net_power, reward, self_consumption};
use ewhrl::experiment::{self, ComparisonTable, Controller, RunReport};
use ewhrl::tariff::{mmp, monthly_peaks};
use ewhrl::thermal::{self, TankParams, TankState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    actor_gradient_error, brute_mmp, brute_monthly_peaks, critic_gradient_error, gae_direct,
    observation, smooth_batch,
};

const YEAR_QUARTERS: usize = 365 * 96;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn tariff_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    let mut floor_violations = 0;
    for _ in 0..1000 {
        let scale = rng.random_range(0.5..8.0);
        let net: Vec<f64> = (0..YEAR_QUARTERS)
            .map(|_| {
                if rng.random::<f64>() < 0.001 {
                    rng.random_range(0.0..15.0)
                } else {
                    rng.random_range(-scale..scale)
                }
            })
            .collect();
        let peaks = monthly_peaks(&net).unwrap();
        let value = mmp(&peaks).unwrap();
        if peaks != brute_monthly_peaks(&net) || value != brute_mmp(&net) {
            mismatches += 1;
        }
        if value < 2.5 {
            floor_violations += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && floor_violations == 0 && elapsed < Duration::from_secs(10),
        format!("{mismatches} mismatches, {floor_violations} floor violations, {elapsed:.2?}"),
    )
}

/// Branch-by-branch hand evaluation: (net power, self-consumption, reward).
fn hand_reward(p_ewh: f64, p_load: f64, p_pv: f64, p_c: f64) -> (f64, f64, f64) {
    let net = p_ewh + p_load - p_pv;
    let surplus = p_pv - p_load;
    let sc = if surplus <= 0.0 {
        0.0
    } else if surplus < p_ewh {
        surplus
    } else {
        p_ewh
    };
    let r = if p_ewh == 0.0 {
        0.0
    } else if net > p_c {
        p_c - net + sc
    } else {
        sc
    };
    (net, sc, r)
}

fn reward_oracle() -> Outcome {
    let mut cases: Vec<[f64; 4]> = vec![
        // Heater on under full PV surplus with injection: no penalty, full bonus.
        [2.4, 0.5, 4.0, 2.5],
        // Heater on at night above the peak threshold.
        [2.4, 1.0, 0.5, 2.5],
        // Partial PV coverage.
        [2.4, 0.3, 1.5, 2.5],
        // Heater off: zero regardless of peak.
        [0.0, 6.0, 0.0, 2.5],
        [0.0, 0.2, 5.0, 2.5],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    while cases.len() < 50 {
        let p_ewh = [0.0, 2.4, rng.random_range(0.1..3.0)][cases.len() % 3];
        cases.push([
            p_ewh,
            rng.random_range(0.0..4.0),
            rng.random_range(0.0..6.0),
            rng.random_range(1.0..4.0),
        ]);
    }
    let hand_values = [(-1.1f64, 2.4f64, 2.4f64), (2.9, 0.0, -0.4), (1.2, 1.2, 1.2)];
    let mut worst = 0.0f64;
    let (mut injection, mut penalized, mut idle) = (0, 0, 0);
    for (i, &[e, l, pv, pc]) in cases.iter().enumerate() {
        let (net, sc, r) = hand_reward(e, l, pv, pc);
        if let Some(&(n0, s0, r0)) = hand_values.get(i) {
            worst = worst
                .max((net - n0).abs())
                .max((sc - s0).abs())
                .max((r - r0).abs());
        }
        worst = worst
            .max((net_power(e, l, pv) - net).abs())
            .max((self_consumption(e, l, pv) - sc).abs())
            .max((reward(e, l, pv, pc) - r).abs());
        injection += usize::from(net < 0.0);
        penalized += usize::from(e > 0.0 && net > pc);
        idle += usize::from(e == 0.0);
    }
    let covered = injection > 0 && penalized > 0 && idle > 0;
    outcome(
        worst <= 1e-12 && covered,
        format!(
            "{} cases, max error {worst:e} ({injection} injection, {penalized} penalized, {idle} idle)",
            cases.len()
        ),
    )
}

fn thermal_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lossless = TankParams {
        loss_coefficient: 0.0,
        ..TankParams::default()
    };
    let mut energy_err = 0.0f64;
    let mut mass_err = 0.0f64;
    for _ in 0..1000 {
        let state = TankState {
            temp_lower: rng.random_range(15.0..70.0),
            temp_upper: rng.random_range(15.0..70.0),
            heater_on: false,
        };
        let on = rng.random::<bool>();
        let (next, kwh) = thermal::step(&state, &lossless, on, 0.0, 15.0).unwrap();
        let before = state.stored_energy(&lossless);
        let after = next.stored_energy(&lossless);
        energy_err = energy_err.max((after - before - kwh).abs() / before);

        // Plug flow: the top `draw` liters leave, inlet water enters below.
        let p = &lossless;
        let draw = rng.random_range(0.0..p.total_volume());
        let (moved, _) = thermal::step(&state, p, false, draw, 15.0).unwrap();
        let from_upper = draw.min(p.volume_upper);
        let from_lower = draw - from_upper;
        let heat_before = state.temp_lower * p.volume_lower + state.temp_upper * p.volume_upper;
        let expected = heat_before + draw * p.inlet_temp
            - from_upper * state.temp_upper
            - from_lower * state.temp_lower;
        let heat_after = moved.temp_lower * p.volume_lower + moved.temp_upper * p.volume_upper;
        mass_err = mass_err.max((heat_after - expected).abs() / heat_before);
    }
    outcome(
        energy_err <= 1e-9 && mass_err <= 1e-12,
        format!("energy error {energy_err:e}, draw balance error {mass_err:e}"),
    )
}

fn gradient_check() -> Outcome {
    let config = PpoConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        for variant in [ActorVariant::Expert, ActorVariant::NonExpert] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut actor = Actor::init(variant, 45.0, 55.0, &mut rng);
            for net in actor.nets_mut() {
                net.params_mut()
                    .for_each(|p| *p += rng.random_range(-0.3..0.3));
            }
            let batch = smooth_batch(&actor, 24, &mut rng);
            worst = worst.max(actor_gradient_error(&actor, &batch, &config));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut critic = Critic::init(&mut rng);
        critic
            .net_mut()
            .params_mut()
            .for_each(|p| *p += rng.random_range(-0.3..0.3));
        let actor = Actor::init(ActorVariant::NonExpert, 45.0, 55.0, &mut rng);
        let batch = smooth_batch(&actor, 24, &mut rng);
        worst = worst.max(critic_gradient_error(&critic, &batch));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let actor = Actor::init(ActorVariant::Expert, 45.0, 55.0, &mut rng);
    let forced: Vec<Sample> = [(43.0, true), (45.0, true), (55.0, false), (60.0, false)]
        .into_iter()
        .enumerate()
        .map(|(i, (temp, u))| Sample {
            obs: observation(temp, 20 * i + 5, 0.7, 0.3),
            u,
            logp: 0.0,
            forced: true,
            reward: 0.0,
            value: 0.0,
            done: false,
            advantage: 1.0 - i as f64,
            target: 0.0,
        })
        .collect();
    let out = actor_loss(&actor, &forced, &config).unwrap();
    let zero =
        out.touched.iter().all(|t| !t) && out.grads.iter().all(|g| g.values().all(|&v| v == 0.0));
    outcome(
        worst < 1e-4 && zero,
        format!("max relative error {worst:e}, override gradient zero: {zero}"),
    )
}

fn gae_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut cuts = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..400);
        let gamma = rng.random_range(0.8..1.0);
        let lambda = rng.random_range(0.8..1.0);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..1.0)).collect();
        let values: Vec<f64> = (0..=n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.02).collect();
        cuts += dones.iter().filter(|&&d| d).count();
        let (adv, targets) = gae(&rewards, &values, &dones, gamma, lambda).unwrap();
        let (adv_ref, targets_ref) = gae_direct(&rewards, &values, &dones, gamma, lambda);
        for (a, b) in adv
            .iter()
            .zip(&adv_ref)
            .chain(targets.iter().zip(&targets_ref))
        {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst <= 1e-10 && cuts > 0,
        format!("max error {worst:e} over 100 rollouts with {cuts} cuts"),
    )
}

fn bandit_sanity() -> Outcome {
    const ITERATIONS: usize = 200;
    let start = Instant::now();
    let config = PpoConfig::default();
    let mut solved = 0;
    let mut firsts = Vec::new();
    for seed in 1..=5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut agent =
            PpoAgent::new(ActorVariant::NonExpert, 45.0, 55.0, config, &mut rng).unwrap();
        let mut env = ContextualBandit::new(seed, ITERATIONS * config.horizon);
        let first = (1..=ITERATIONS).find(|_| {
            agent
                .train_iteration(&mut env, &mut rng)
                .unwrap()
                .mean_reward
                > 0.9
        });
        solved += usize::from(first.is_some());
        firsts.push(first.map_or("-".to_string(), |i| i.to_string()));
    }
    let elapsed = start.elapsed();
    outcome(
        solved == 5 && elapsed < Duration::from_secs(60),
        format!(
            "{solved}/5 seeds, first iteration above 0.9: [{}], {elapsed:.2?}",
            firsts.join(", ")
        ),
    )
}

fn houses() -> Vec<YearDataset> {
    data::fixture_houses()
        .into_iter()
        .map(|(name, f)| data::synth_year(f.seed, &f.profile, name).unwrap())
        .collect()
}

fn desk_scale_run(cfg: &Config) -> Vec<RunReport> {
    let f = data::fixture(&cfg.pretrain_profile).unwrap();
    let pretrain_data = data::synth_year(
        cfg.pretrain_data_seed,
        &f.profile,
        cfg.pretrain_profile.as_str(),
    )
    .unwrap();
    experiment::run_plan(cfg, &pretrain_data, &houses()).unwrap()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn end_to_end(table: &ComparisonTable, elapsed: Duration) -> Vec<(String, Outcome)> {
    let houses: Vec<&String> = table.best_rbc.keys().collect();
    let row = |c: Controller, h: &str| table.row(c, h).expect("row present");
    let expert = Controller::RlExpert;

    let worse: Vec<&str> = houses
        .iter()
        .filter(|h| row(expert, h).bill_mean >= row(Controller::Hc, h).bill_mean)
        .map(|h| h.as_str())
        .collect();
    let a = outcome(
        worse.is_empty() && houses.len() == 5,
        format!(
            "expert bill below HC on {}/{} houses (mean {:.1} vs {:.1} €)",
            houses.len() - worse.len(),
            houses.len(),
            mean(houses.iter().map(|h| row(expert, h).bill_mean)),
            mean(houses.iter().map(|h| row(Controller::Hc, h).bill_mean)),
        ),
    );

    let expert_bill = mean(houses.iter().map(|h| row(expert, h).bill_mean));
    let rbc_bill = mean(houses.iter().map(|h| row(table.best_rbc[*h], h).bill_mean));
    let b = outcome(
        expert_bill <= rbc_bill,
        format!("expert mean bill {expert_bill:.1} € vs best RBC {rbc_bill:.1} €"),
    );

    let lower: Vec<&str> = houses
        .iter()
        .filter(|h| {
            row(expert, h).self_consumption_mean <= row(Controller::Hc, h).self_consumption_mean
        })
        .map(|h| h.as_str())
        .collect();
    let c = outcome(
        lower.is_empty(),
        format!(
            "expert self-consumption above HC on {}/{} houses (mean {:.3} vs {:.3})",
            houses.len() - lower.len(),
            houses.len(),
            mean(houses.iter().map(|h| row(expert, h).self_consumption_mean)),
            mean(
                houses
                    .iter()
                    .map(|h| row(Controller::Hc, h).self_consumption_mean)
            ),
        ),
    );

    let expert_std = mean(houses.iter().map(|h| row(expert, h).bill_std));
    let plain_std = mean(houses.iter().map(|h| row(Controller::RlPlain, h).bill_std));
    let d = outcome(
        expert_std < plain_std,
        format!("across-seed bill std {expert_std:.2} € (expert) vs {plain_std:.2} € (non-expert)"),
    );

    let runtime = outcome(
        elapsed < Duration::from_secs(30 * 60),
        format!("{elapsed:.1?}"),
    );
    vec![
        ("7a".into(), a),
        ("7b".into(), b),
        ("7c".into(), c),
        ("7d".into(), d),
        ("7 runtime".into(), runtime),
    ]
}

fn comfort(reports: &[RunReport]) -> Outcome {
    let failed = reports.iter().filter(|r| r.is_failed()).count();
    let worst = reports.iter().filter(|r| !r.is_failed()).min_by(|a, b| {
        a.comfort
            .fraction_above_floor
            .total_cmp(&b.comfort.fraction_above_floor)
    });
    let pass = failed == 0
        && reports
            .iter()
            .all(|r| r.comfort.fraction_above_floor > 0.999 && r.comfort.floor_temp == 40.0);
    let detail = match worst {
        Some(r) => format!(
            "{} runs, {failed} failed, worst {:.5} ({} on {} seed {}, min sensor {:.2} °C)",
            reports.len(),
            r.comfort.fraction_above_floor,
            r.controller,
            r.house,
            r.seed,
            r.comfort.min_sensor_temp
        ),
        None => format!("{} runs, all failed", reports.len()),
    };
    outcome(pass, detail)
}

fn determinism(first: &[RunReport], second: &[RunReport]) -> Outcome {
    let bytes =
        |rs: &[RunReport]| -> Vec<String> { rs.iter().map(|r| r.to_json().unwrap()).collect() };
    let (a, b) = (bytes(first), bytes(second));
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    let tables = experiment::compare(first).unwrap().to_json().unwrap()
        == experiment::compare(second).unwrap().to_json().unwrap();
    outcome(
        differing == 0 && tables,
        format!(
            "{} reports, {differing} differ, comparison identical: {tables}",
            a.len()
        ),
    )
}

fn report(name: &str, o: &Outcome) -> bool {
    println!(
        "{} criterion {name}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o.pass
}

fn main() -> ExitCode {
    let mut all = true;
    all &= report("1 tariff oracle", &tariff_oracle());
    all &= report("2 reward oracle", &reward_oracle());
    all &= report("3 thermal conservation", &thermal_conservation());
    all &= report("4 gradient check", &gradient_check());
    all &= report("5 GAE equivalence", &gae_equivalence());
    all &= report("6 PPO bandit sanity", &bandit_sanity());

    let cfg = Config::default();
    let start = Instant::now();
    let reports = desk_scale_run(&cfg);
    let elapsed = start.elapsed();
    match experiment::compare(&reports) {
        Ok(table) => {
            for (name, o) in end_to_end(&table, elapsed) {
                all &= report(&name, &o);
            }
        }
        Err(e) => {
            all &= report("7 desk-scale run", &outcome(false, e.to_string()));
        }
    }
    all &= report("8 comfort", &comfort(&reports));
    all &= report(
        "9 determinism",
        &determinism(&reports, &desk_scale_run(&cfg)),
    );

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
