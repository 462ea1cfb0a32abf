//! Subcommands of the `factory-d2d` binary, callable as plain functions.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use factory_d2d::dissemination::StrategyKind;
use factory_d2d::engine::{self, aggregate, Metrics};
use factory_d2d::losmap::{build_infra_los_map, build_los_trace, LinkId};
use factory_d2d::report::{self, AggregateRow, RunRow};
use factory_d2d::scenario::{default_scenario, ScenarioFile};

pub const DEFAULT_INTERARRIVALS_MS: [f64; 10] =
    [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub strategies: Vec<StrategyKind>,
    pub interarrival_ms: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> factory_d2d::Result<()> {
        let invalid = |field: &str, reason: &str| factory_d2d::Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        };
        if self.strategies.is_empty() {
            return Err(invalid("--strategies", "at least one strategy is required"));
        }
        if self.interarrival_ms.is_empty() {
            return Err(invalid("--interarrival-ms", "at least one value is required"));
        }
        if self.interarrival_ms.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("--interarrival-ms", "values must be positive"));
        }
        if self.runs == 0 {
            return Err(invalid("--runs", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(invalid("--threads", "must be at least 1"));
        }
        Ok(())
    }
}

/// What a sweep produced, in output order.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub runs: Vec<(RunRow, Metrics)>,
    pub aggregate: Vec<AggregateRow>,
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(f)),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn cmd_generate_default(out: &Path) -> Result<ScenarioFile> {
    let scenario = default_scenario();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    scenario.save(out)?;
    Ok(scenario)
}

/// Runs every (strategy, interarrival, run) combination and writes
/// `runs.csv`, `aggregate.csv` and the three delay/drop figures.
pub fn cmd_run(scenario_path: &Path, sweep: &SweepSpec) -> Result<SweepOutcome> {
    sweep.validate()?;
    let scenario = ScenarioFile::load(scenario_path)?;
    let outcome = run_sweep(&scenario, sweep)?;
    ensure_dir(&sweep.out)?;
    let rows: Vec<RunRow> = outcome.runs.iter().map(|(r, _)| r.clone()).collect();
    report::write_rows(sweep.out.join("runs.csv"), &rows)?;
    let agg_path = sweep.out.join("aggregate.csv");
    report::write_rows(&agg_path, &outcome.aggregate)?;
    report::plots_from_aggregate_csv(&agg_path, &sweep.out)?;
    Ok(outcome)
}

/// The sweep itself, without touching the filesystem.
pub fn run_sweep(scenario: &ScenarioFile, sweep: &SweepSpec) -> Result<SweepOutcome> {
    sweep.validate()?;
    let mut jobs = Vec::new();
    for &strategy in &sweep.strategies {
        for &ia_ms in &sweep.interarrival_ms {
            let mut cfg = scenario.sim_config(strategy, ia_ms * 1e-3);
            cfg.n_runs = sweep.runs;
            cfg.base_seed = sweep.seed;
            cfg.validate()
                .with_context(|| format!("{strategy} at {ia_ms} ms"))?;
            for r in 0..sweep.runs {
                jobs.push((cfg.clone(), r));
            }
        }
    }
    let results: Vec<factory_d2d::Result<(RunRow, Metrics)>> = in_pool(sweep.threads, || {
        jobs.par_iter()
            .map(|(cfg, r)| {
                let seed = cfg.base_seed + *r as u64;
                let m = engine::run(cfg, seed)?;
                Ok((RunRow::new(cfg.strategy, cfg.interarrival_s, *r, seed, &m), m))
            })
            .collect()
    })?;
    let runs = results.into_iter().collect::<factory_d2d::Result<Vec<_>>>()?;
    for (row, m) in &runs {
        if !m.is_conserved() {
            bail!(
                "conservation violated in {} run {} at {} ms",
                row.strategy,
                row.run,
                row.interarrival_ms
            );
        }
    }
    let aggregate = runs
        .chunks(sweep.runs)
        .map(|chunk| {
            let metrics: Vec<Metrics> = chunk.iter().map(|(_, m)| m.clone()).collect();
            let first = &chunk[0].0;
            AggregateRow::new(first.strategy, first.interarrival_ms * 1e-3, &aggregate(&metrics))
        })
        .collect();
    Ok(SweepOutcome { runs, aggregate })
}

#[derive(Debug, Clone, Default)]
pub struct LosMapOptions {
    pub grid_res_m: Option<f64>,
    pub samples: Option<usize>,
}

/// Writes the infra LoS heat map (CSV and SVG), one exact LoS trace per
/// device (CSV) and a stacked trace plot of the probe devices.
pub fn cmd_losmap(scenario_path: &Path, out: &Path, opts: &LosMapOptions) -> Result<()> {
    let scenario = ScenarioFile::load(scenario_path)?;
    let lm = &scenario.losmap;
    let grid_res = opts.grid_res_m.unwrap_or(lm.grid_res_m);
    let samples = opts.samples.unwrap_or(lm.n_samples);
    let map = build_infra_los_map(&scenario.scene, grid_res, lm.plane_height_m, samples, lm.seed)?;
    ensure_dir(out)?;
    report::write_losmap_csv(out.join("losmap.csv"), &map)?;
    report::write_svg(out.join("losmap.svg"), &report::losmap_svg(&map, &scenario.scene))?;

    let traces = scenario
        .scene
        .devices
        .par_iter()
        .map(|d| {
            build_los_trace(
                &scenario.scene,
                LinkId::infra(d.id),
                lm.trace_dt_s,
                lm.trace_duration_s,
                false,
                lm.seed,
            )
            .map(|t| (d.id, t))
        })
        .collect::<factory_d2d::Result<Vec<_>>>()?;
    let trace_dir = out.join("traces");
    ensure_dir(&trace_dir)?;
    for (id, t) in &traces {
        report::write_trace_csv(trace_dir.join(format!("device_{id:02}.csv")), t)?;
    }
    let shown: Vec<(String, _)> = if scenario.probe_devices.is_empty() {
        traces.iter().take(3).map(|(id, t)| (format!("Device {id}"), t)).collect()
    } else {
        scenario
            .probe_devices
            .iter()
            .filter_map(|p| traces.iter().find(|(id, _)| id == p))
            .map(|(id, t)| (format!("Device {id}"), t))
            .collect()
    };
    report::write_svg(out.join("traces.svg"), &report::traces_svg(&shown))?;
    Ok(())
}

/// Exit status for an error: 2 for invalid input, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let validation = err.chain().any(|e| {
        e.downcast_ref::<factory_d2d::Error>()
            .is_some_and(factory_d2d::Error::is_validation)
    });
    if validation {
        2
    } else {
        1
    }
}
