//! Report and artifact writers. Every report embeds the fully resolved
//! configuration so a run can be reproduced from its own output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use srploc::localize::DoaEstimate;
use srploc::sim::Scenario;
use srploc::solvers::IterationRecord;
use srploc::srp::write_map_csv;
use srploc::DoaGrid;

use crate::config::JobConfig;
use crate::runner::{CompareRow, MethodOutput, RunError, RunResult};

#[derive(Serialize)]
struct EstimateRecord {
    rank: usize,
    elevation_deg: f64,
    azimuth_deg: f64,
    score: f64,
}

impl From<&DoaEstimate> for EstimateRecord {
    fn from(e: &DoaEstimate) -> Self {
        Self {
            rank: e.rank,
            elevation_deg: e.elevation_deg,
            azimuth_deg: e.azimuth_deg,
            score: e.score,
        }
    }
}

#[derive(Serialize)]
struct LocalizeReport<'a> {
    method: &'a str,
    estimates: Vec<EstimateRecord>,
    shortfall: bool,
    iterations: Option<usize>,
    converged: Option<bool>,
    runtime_ms: Option<u64>,
    config: &'a JobConfig,
}

pub fn write_localize_report(
    out_dir: &Path,
    config: &JobConfig,
    output: &MethodOutput,
    map_grid: &DoaGrid,
    runtime_ms: Option<u64>,
) -> RunResult<PathBuf> {
    fs::create_dir_all(out_dir).map_err(io_err)?;
    let report = LocalizeReport {
        method: output.method.name(),
        estimates: output.selection.estimates.iter().map(Into::into).collect(),
        shortfall: output.selection.shortfall,
        iterations: output.iterations,
        converged: output.converged,
        runtime_ms: if config.report.timing { runtime_ms } else { None },
        config,
    };
    let path = out_dir.join("report.json");
    write_json(&path, &report)?;

    let map_path = out_dir.join("map.csv");
    let mut file = fs::File::create(&map_path).map_err(io_err)?;
    write_map_csv(&mut file, map_grid, &output.map)?;

    if config.report.trace {
        if let Some(trace) = &output.trace {
            write_trace_csv(&out_dir.join("trace.csv"), trace)?;
        }
    }
    Ok(path)
}

fn write_trace_csv(path: &Path, trace: &[IterationRecord]) -> RunResult<()> {
    let mut file = fs::File::create(path).map_err(io_err)?;
    writeln!(
        file,
        "iteration,relative_change,active,top1_index,top1_gamma,top2_index,top2_gamma,top3_index,top3_gamma,top4_index,top4_gamma,top5_index,top5_gamma"
    )
    .map_err(io_err)?;
    for r in trace {
        let mut row = format!("{},{},{}", r.iteration, r.relative_change, r.active);
        for i in 0..5 {
            match r.top5.get(i) {
                Some((idx, g)) => row.push_str(&format!(",{idx},{g}")),
                None => row.push_str(",,"),
            }
        }
        writeln!(file, "{row}").map_err(io_err)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TruthRecord {
    elevation_deg: f64,
    azimuth_deg: f64,
    signal: String,
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    wav: String,
    seed: u64,
    duration_s: f64,
    sample_rate: f64,
    snr_db: Option<f64>,
    sources: Vec<TruthRecord>,
    config: &'a JobConfig,
}

pub fn write_simulate_outputs(
    out_dir: &Path,
    config: &JobConfig,
    scenario: &Scenario,
    signal: &srploc::MultichannelSignal,
) -> RunResult<PathBuf> {
    fs::create_dir_all(out_dir).map_err(io_err)?;
    let wav_path = out_dir.join("scene.wav");
    srploc::write_wav(&wav_path, signal)?;
    let scenario_cfg = config
        .scenario
        .as_ref()
        .expect("simulate requires a scenario");
    let report = SimulateReport {
        wav: "scene.wav".into(),
        seed: scenario.seed,
        duration_s: scenario.duration_s,
        sample_rate: scenario.sample_rate,
        snr_db: scenario.snr_db,
        sources: scenario_cfg
            .sources
            .iter()
            .map(|s| TruthRecord {
                elevation_deg: s.elevation_deg,
                azimuth_deg: s.azimuth_deg,
                signal: s.signal.clone(),
            })
            .collect(),
        config,
    };
    let path = out_dir.join("truth.json");
    write_json(&path, &report)?;
    Ok(path)
}

#[derive(Serialize)]
struct CompareReport<'a> {
    methods: Vec<&'a str>,
    durations: &'a [f64],
    trials: usize,
    rows: &'a [CompareRow],
    config: &'a JobConfig,
}

pub fn write_compare_outputs(
    out_dir: &Path,
    config: &JobConfig,
    methods: &[crate::config::Method],
    durations: &[f64],
    trials: usize,
    rows: &[CompareRow],
) -> RunResult<PathBuf> {
    fs::create_dir_all(out_dir).map_err(io_err)?;
    let csv_path = out_dir.join("compare.csv");
    let mut file = fs::File::create(&csv_path).map_err(io_err)?;
    writeln!(
        file,
        "method,duration_s,trials,failures,median_le_deg,iqr_le_deg"
    )
    .map_err(io_err)?;
    for r in rows {
        writeln!(
            file,
            "{},{},{},{},{},{}",
            r.method, r.duration_s, r.trials, r.failures, r.median_le_deg, r.iqr_le_deg
        )
        .map_err(io_err)?;
    }
    let report = CompareReport {
        methods: methods.iter().map(|m| m.name()).collect(),
        durations,
        trials,
        rows,
        config,
    };
    let path = out_dir.join("report.json");
    write_json(&path, &report)?;
    Ok(csv_path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> RunResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| RunError::Compute(srploc::Error::Format(e.to_string())))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err)?;
    Ok(())
}

fn io_err(e: std::io::Error) -> RunError {
    RunError::Compute(srploc::Error::Io(e))
}
