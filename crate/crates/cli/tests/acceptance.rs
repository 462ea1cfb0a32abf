//! Acceptance suite at desk scale: default floor, 60 s runs, 50 runs per
//! point, interarrival 5, 10, 20, 30, 40, 50 ms. Prints one PASS/FAIL line
//! per criterion and exits non-zero if any fails.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use factory_d2d::dissemination::StrategyKind;
use factory_d2d::engine::{aggregate, infra_traces, run_replications, Estimate, Metrics, RunReport};
use factory_d2d::losmap::{build_infra_los_map, fraction_any_los};
use factory_d2d::radio::{achievable_rate, pathloss_db, snr_db, RadioParams};
use factory_d2d::report::AggregateRow;
use factory_d2d::scenario::ScenarioFile;
use factory_d2d::scene::{segment_blocked, Motion, Obstacle, ObstacleKind, Point2, Point3, Rect, Scene, Trajectory};
use factory_d2d_cli::{cmd_generate_default, cmd_run, SweepSpec};

const INTERARRIVALS_MS: [f64; 6] = [5.0, 10.0, 20.0, 30.0, 40.0, 50.0];
const RUNS: usize = 50;

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u8, name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, name, pass, detail }
}

/// Mean and CI half width of one observable, as written to aggregate.csv.
#[derive(Clone, Copy)]
struct Ci {
    mean: f64,
    half: f64,
}

impl Ci {
    fn overlaps(self, other: Ci) -> bool {
        self.mean - self.half <= other.mean + other.half
            && other.mean - other.half <= self.mean + self.half
    }

    /// `self <= other`, or indistinguishable at 95%.
    fn le(self, other: Ci) -> bool {
        self.mean <= other.mean || self.overlaps(other)
    }
}

type Table = HashMap<(StrategyKind, u64), AggregateRow>;

fn key(s: StrategyKind, ia_ms: f64) -> (StrategyKind, u64) {
    (s, (ia_ms * 1000.0).round() as u64)
}

fn drop_total(t: &Table, s: StrategyKind, ia: f64) -> Ci {
    let r = &t[&key(s, ia)];
    Ci { mean: r.drop_total, half: r.drop_total_ci }
}

fn delay(t: &Table, s: StrategyKind, ia: f64) -> Option<Ci> {
    let r = &t[&key(s, ia)];
    Some(Ci { mean: r.mean_delay_ms?, half: r.mean_delay_ci_ms.unwrap_or(0.0) })
}

fn strategy_ordering(t: &Table) -> Verdict {
    use StrategyKind::*;
    let mut bad = Vec::new();
    for ia in INTERARRIVALS_MS {
        let (p, s, d) = (drop_total(t, Predictive, ia), drop_total(t, DirectWithStorage, ia), drop_total(t, Direct, ia));
        if !(p.le(s) && s.le(d)) {
            bad.push(format!("{ia} ms: P {:.5} S {:.5} D {:.5}", p.mean, s.mean, d.mean));
        }
    }
    let (p5, d5) = (drop_total(t, Predictive, 5.0), drop_total(t, Direct, 5.0));
    if p5.mean >= d5.mean {
        bad.push(format!("5 ms not strict: P {:.5} D {:.5}", p5.mean, d5.mean));
    }
    let detail = if bad.is_empty() {
        format!("total drop at 5 ms: P {:.5} < S {:.5} <= D {:.5}", p5.mean, drop_total(t, DirectWithStorage, 5.0).mean, d5.mean)
    } else {
        bad.join("; ")
    };
    verdict(1, "strategy ordering", bad.is_empty(), detail)
}

fn load_monotonicity(t: &Table) -> Verdict {
    let mut bad = Vec::new();
    for s in StrategyKind::ALL {
        for (i, &a) in INTERARRIVALS_MS.iter().enumerate() {
            for &b in &INTERARRIVALS_MS[i + 1..] {
                let (lo, hi) = (drop_total(t, s, a), drop_total(t, s, b));
                if !hi.le(lo) {
                    bad.push(format!("{s}: {a} ms {:.5} < {b} ms {:.5}", lo.mean, hi.mean));
                }
            }
        }
    }
    let span: Vec<String> = StrategyKind::ALL
        .iter()
        .map(|&s| format!("{s} {:.5}->{:.5}", drop_total(t, s, 5.0).mean, drop_total(t, s, 50.0).mean))
        .collect();
    let pass = bad.is_empty();
    verdict(2, "load monotonicity", pass, if pass { span.join(", ") } else { bad.join("; ") })
}

fn blockage_dominance(t: &Table) -> Verdict {
    let r = &t[&key(StrategyKind::Direct, 5.0)];
    verdict(
        3,
        "blockage dominance",
        r.drop_blockage >= r.drop_rate,
        format!("direct at 5 ms: blockage {:.5}, rate {:.5}", r.drop_blockage, r.drop_rate),
    )
}

fn delay_ordering(t: &Table) -> Verdict {
    let mut bad = Vec::new();
    let mut shown = Vec::new();
    for ia in INTERARRIVALS_MS {
        match (delay(t, StrategyKind::Predictive, ia), delay(t, StrategyKind::DirectWithStorage, ia)) {
            (Some(p), Some(s)) => {
                if !p.le(s) {
                    bad.push(format!("{ia} ms: P {:.3} ms > S {:.3} ms", p.mean, s.mean));
                }
                shown.push(format!("{ia}: {:.3}/{:.3}", p.mean, s.mean));
            }
            _ => bad.push(format!("{ia} ms: no deliveries")),
        }
    }
    let pass = bad.is_empty();
    let detail = if pass { format!("P/S ms {}", shown.join(", ")) } else { bad.join("; ") };
    verdict(4, "delay ordering", pass, detail)
}

fn los_diversity(scenario: &ScenarioFile) -> Verdict {
    let tick = scenario.sim.tick_s;
    let n = (scenario.sim.sim_duration_s / tick).round() as usize;
    let traces = infra_traces(&scenario.scene, tick, n);
    let probes: Vec<_> = scenario
        .probe_devices
        .iter()
        .filter_map(|&id| scenario.scene.device_index(id))
        .map(|i| traces[i].clone())
        .collect();
    let each: Vec<String> = probes
        .iter()
        .zip(&scenario.probe_devices)
        .map(|(tr, id)| format!("dev {id} {:.3}", fraction_any_los(std::slice::from_ref(tr))))
        .collect();
    let any = fraction_any_los(&probes);
    verdict(
        5,
        "LoS diversity",
        probes.len() == 3 && any >= 0.95,
        format!("any-LoS {any:.4} ({})", each.join(", ")),
    )
}

fn shuttle(y: f64, x0: f64, x1: f64, speed: f64, phase: f64) -> Trajectory {
    Trajectory {
        waypoints: vec![Point2::new(x0, y), Point2::new(x1, y)],
        speed_mps: speed,
        motion: Motion::BackAndForth,
        phase_offset_s: phase,
    }
}

fn block(name: &str, footprint: Rect, height_m: f64, kind: ObstacleKind) -> Obstacle {
    Obstacle { name: Some(name.into()), footprint, height_m, kind }
}

fn three_obstacle_scene() -> Scene {
    let mut trajectories = BTreeMap::new();
    trajectories.insert("cart_a".into(), shuttle(2.0, 1.0, 9.0, 1.0, 0.0));
    trajectories.insert("cart_b".into(), shuttle(3.5, 2.0, 6.0, 0.5, 3.0));
    let mobile = |t: &str| ObstacleKind::Mobile { trajectory: t.into() };
    Scene {
        floor_w_m: 10.0,
        floor_d_m: 6.0,
        base_station: Point3::new(5.0, 0.0, 3.0),
        obstacles: vec![
            block("cabinet", Rect::new(7.0, 3.0, 8.0, 3.6), 2.5, ObstacleKind::Static),
            block("cart_a", Rect::new(0.0, 0.0, 1.5, 0.8), 2.8, mobile("cart_a")),
            block("cart_b", Rect::new(0.0, 0.0, 1.0, 1.0), 2.8, mobile("cart_b")),
        ],
        trajectories,
        devices: vec![],
    }
}

fn map_oracle() -> Verdict {
    let scene = three_obstacle_scene();
    let (res, plane, period, steps) = (0.5, 1.0, 16.0, 16_000);
    let start = Instant::now();
    let map = build_infra_los_map(&scene, res, plane, 10_000, 11).expect("valid scene");
    let elapsed = start.elapsed().as_secs_f64();

    // Brute force: time midpoints over one full period.
    let mut clear = vec![0usize; map.nx * map.ny];
    let mut boxes = Vec::new();
    for k in 0..steps {
        scene.boxes_at_into((k as f64 + 0.5) / steps as f64 * period, &mut boxes);
        for (i, c) in clear.iter_mut().enumerate() {
            let p = map.cell_center(i % map.nx, i / map.nx).at_height(plane);
            if !segment_blocked(&boxes, p, scene.base_station) {
                *c += 1;
            }
        }
    }
    let worst = map
        .cells
        .iter()
        .zip(&clear)
        .map(|(m, &c)| (m - c as f64 / steps as f64).abs())
        .fold(0.0, f64::max);
    verdict(
        6,
        "LoS-map oracle",
        worst <= 0.02 && elapsed < 60.0,
        format!("{} cells, max |diff| {worst:.4}, {elapsed:.2} s", map.cells.len()),
    )
}

fn radio_exactness() -> Verdict {
    fn rel(got: f64, want: f64) -> f64 {
        if want == 0.0 { got.abs() } else { ((got - want) / want).abs() }
    }
    let p = RadioParams::infra_default();
    let f28 = 28f64.log10();
    let noise = -174.0 + 10.0 * 800e6f64.log10() + 7.0;
    let budget = 23.0 + 5.0 + 15.0 - noise;
    let shannon = |snr: f64| 800e6 * (1.0 + 10f64.powf(snr / 10.0)).log2();
    let pl10 = 31.84 + 21.5 * 10f64.log10() + 19.0 * f28;
    let louder = RadioParams { tx_power_dbm: 26.0, ..p.clone() };
    let d2d = RadioParams::d2d_default();

    let cases: [(&str, f64, f64); 9] = [
        ("PL LoS 1 m", pathloss_db(&p, 1.0, true).unwrap(), 31.84 + 19.0 * f28),
        ("PL LoS 10 m", pathloss_db(&p, 10.0, true).unwrap(), pl10),
        ("PL NLoS 10 m", pathloss_db(&p, 10.0, false).unwrap(), 33.0 + 25.5 + 20.0 * f28),
        ("SNR at 10 m", snr_db(&p, pl10), budget - pl10),
        ("SNR at full budget", snr_db(&p, budget), 0.0),
        ("SNR +3 dB tx", snr_db(&louder, pl10) - snr_db(&p, pl10), 3.0),
        ("rate at 0 dB", achievable_rate(&p, 0.0), 800e6),
        ("rate at 10 m", achievable_rate(&p, budget - pl10), shannon(budget - pl10)),
        ("WiGig cap", achievable_rate(&d2d, 40.0), 10e9),
    ];
    let worst = cases
        .iter()
        .map(|&(name, got, want)| (name, rel(got, want)))
        .fold(("", -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
    // The rounded figures quoted for these examples.
    let quoted = [(cases[0].2, 59.34), (pl10, 80.84), (cases[2].2, 87.44), (noise, -77.97), (budget - pl10, 40.13)]
        .iter()
        .all(|&(v, q)| (v - q).abs() < 0.005)
        && (shannon(40.13) / 1e9 - 10.66).abs() < 0.005;
    verdict(
        7,
        "radio exactness",
        worst.1 <= 1e-9 && quoted,
        format!("9 examples, worst relative error {:.1e} ({})", worst.1, worst.0),
    )
}

fn determinism(scenario_path: &Path, out: &Path) -> Verdict {
    let spec = |dir: &str| SweepSpec {
        strategies: StrategyKind::ALL.to_vec(),
        interarrival_ms: vec![5.0, 50.0],
        runs: 4,
        seed: 1,
        out: out.join(dir),
        threads: None,
    };
    let (a, b) = (spec("a"), spec("b"));
    cmd_run(scenario_path, &a).expect("first run");
    cmd_run(scenario_path, &b).expect("second run");
    let same = |f: &str| std::fs::read(a.out.join(f)).unwrap() == std::fs::read(b.out.join(f)).unwrap();
    let bytes = std::fs::read(a.out.join("runs.csv")).unwrap().len();
    verdict(
        8,
        "determinism",
        same("runs.csv") && same("aggregate.csv"),
        format!("runs.csv ({bytes} bytes) and aggregate.csv identical across two executions"),
    )
}

fn rel_change(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 { 0.0 } else { (a - b).abs() / scale }
}

type Observable = fn(&RunReport) -> &Estimate;

fn tick_stability(scenario: &ScenarioFile, runs_seen: &mut Vec<Metrics>) -> Verdict {
    let reports: Vec<(f64, _)> = [1e-3, 0.5e-3, 0.25e-3]
        .into_iter()
        .map(|tick| {
            let mut cfg = scenario.sim_config(StrategyKind::Predictive, 0.01);
            cfg.tick_s = tick;
            cfg.n_runs = RUNS;
            let runs = run_replications(&cfg).expect("valid config");
            runs_seen.extend(runs.iter().cloned());
            (tick, aggregate(&runs))
        })
        .collect();
    let observables: [(&str, Observable); 4] = [
        ("blockage", |r| &r.drop_blockage),
        ("rate", |r| &r.drop_rate),
        ("total", |r| &r.drop_total),
        ("delay", |r| &r.mean_delay_s),
    ];
    let base = &reports[0].1;
    let mut worst = (String::new(), 0.0);
    for (tick, rep) in &reports[1..] {
        for (name, get) in observables {
            let c = rel_change(get(base).mean, get(rep).mean);
            if c >= worst.1 || worst.0.is_empty() {
                worst = (format!("{name} at {} ms", tick * 1e3), c);
            }
        }
    }
    verdict(
        9,
        "discretization stability",
        worst.1 < 0.05,
        format!("max relative change {:.4} ({})", worst.1, worst.0),
    )
}

fn conservation(runs: &[Metrics]) -> Verdict {
    let broken = runs.iter().filter(|m| !m.is_conserved()).count();
    let generated: u64 = runs.iter().map(|m| m.n_generated).sum();
    verdict(
        10,
        "conservation",
        broken == 0 && !runs.is_empty(),
        format!("{} runs, {generated} contents, {broken} imbalanced", runs.len()),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let scenario_path = dir.path().join("scenario.json");
    let scenario = cmd_generate_default(&scenario_path).expect("default scenario");

    let desk = SweepSpec {
        strategies: StrategyKind::ALL.to_vec(),
        interarrival_ms: INTERARRIVALS_MS.to_vec(),
        runs: RUNS,
        seed: 1,
        out: dir.path().join("desk"),
        threads: None,
    };
    let sweep_start = Instant::now();
    let outcome = cmd_run(&scenario_path, &desk).expect("desk sweep");
    println!(
        "desk sweep: {} runs of {} s in {:.0} s",
        outcome.runs.len(),
        scenario.sim.sim_duration_s,
        sweep_start.elapsed().as_secs_f64()
    );
    let table: Table = outcome
        .aggregate
        .iter()
        .map(|r| (key(r.strategy, r.interarrival_ms), r.clone()))
        .collect();
    let mut all_runs: Vec<Metrics> = outcome.runs.iter().map(|(_, m)| m.clone()).collect();

    let mut verdicts = vec![
        strategy_ordering(&table),
        load_monotonicity(&table),
        blockage_dominance(&table),
        delay_ordering(&table),
        los_diversity(&scenario),
        map_oracle(),
        radio_exactness(),
        determinism(&scenario_path, dir.path()),
        tick_stability(&scenario, &mut all_runs),
    ];
    verdicts.push(conservation(&all_runs));

    println!();
    for v in &verdicts {
        println!(
            "{} {:>2} {}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.id,
            v.name,
            v.detail
        );
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!(
        "\n{} passed, {failed} failed in {:.0} s",
        verdicts.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
