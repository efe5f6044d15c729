//! Experiment commands behind the CLI: single runs, oracle checks, sweeps,
//! log audits and the three-phase EV experiment. Every output file starts
//! with a `# seed=<seed> scenario=<name>` comment line.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::base_station::{audit_privacy, parse_records, v2v_text, AuditContext, AuditVerdict};
use crate::cost::{find_min_speed, SpeedRange};
use crate::mobility::{fleet_costs, run_scenario, RoundMode, RunArtifact, RunOptions, SimError, Simulation};
use crate::oracle::{centralized_optimum, OptimumReport, DEFAULT_TOL};
use crate::scenario::{check_sweep_value, CommModel, ConfigError, Scenario, SweepAxis};

const GRAMS_PER_TONNE: f64 = 1e6;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn header(scenario: &Scenario) -> String {
    format!("# seed={} scenario={}\n", scenario.seed, scenario.name)
}

fn write_text(path: &Path, scenario: &Scenario, body: &str) -> Result<(), HarnessError> {
    let mut f = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f.write_all(header(scenario).as_bytes()).map_err(io_err(path))?;
    f.write_all(body.as_bytes()).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

fn write_csv<R: Serialize>(path: &Path, scenario: &Scenario, rows: impl IntoIterator<Item = R>) -> Result<(), HarnessError> {
    let csv_err = |source| HarnessError::Csv { path: path.to_path_buf(), source };
    let mut file = BufWriter::new(File::create(path).map_err(io_err(path))?);
    file.write_all(header(scenario).as_bytes()).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct TraceCsv {
    round: u64,
    vehicle_id: u32,
    section: String,
    position_m: f64,
    actual_speed_kmh: f64,
    recommended_speed_kmh: Option<f64>,
    cost_rate: f64,
}

#[derive(Serialize)]
struct MetricsCsv {
    round: u64,
    fleet_size_per_section: String,
    total_rate: f64,
    moving_average: f64,
    spread: f64,
    mean_degree: f64,
}

/// Per-section totals in reporting units: tonnes of CO2, or kWh for EVs.
pub fn reported_totals(run: &RunArtifact) -> Vec<f64> {
    let scale = if run.ev { 1.0 } else { 1.0 / GRAMS_PER_TONNE };
    run.metrics.section_totals().iter().map(|t| t * scale).collect()
}

/// Files written by [`cmd_run`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub trace: PathBuf,
    pub metrics: PathBuf,
    pub messages: PathBuf,
    pub v2v: PathBuf,
    pub scenario: PathBuf,
}

fn prepare_dir(out: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(out).map_err(io_err(out))
}

/// Writes the trace, metrics, message log, V2V log and resolved scenario of
/// a finished run.
pub fn write_run(scenario: &Scenario, run: &RunArtifact, out: &Path) -> Result<RunOutputs, HarnessError> {
    prepare_dir(out)?;
    let o = &scenario.outputs;
    let paths = RunOutputs {
        trace: out.join(&o.trace),
        metrics: out.join(&o.metrics),
        messages: out.join(&o.messages),
        v2v: out.join(&o.v2v),
        scenario: out.join("scenario.json"),
    };
    let names = &run.section_names;
    write_csv(
        &paths.trace,
        scenario,
        run.trace.iter().map(|r| TraceCsv {
            round: r.round,
            vehicle_id: r.vehicle.0,
            section: names[r.section].clone(),
            position_m: r.position_m,
            actual_speed_kmh: r.actual_speed_kmh,
            recommended_speed_kmh: r.recommended_speed_kmh,
            cost_rate: r.cost_rate,
        }),
    )?;
    write_csv(
        &paths.metrics,
        scenario,
        run.metrics.rounds().iter().map(|m| MetricsCsv {
            round: m.round,
            fleet_size_per_section: m.fleet_per_section.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"),
            total_rate: m.total_rate,
            moving_average: m.moving_average,
            spread: m.spread,
            mean_degree: m.mean_degree,
        }),
    )?;
    write_text(&paths.messages, scenario, &run.log.to_text())?;
    write_text(&paths.v2v, scenario, &v2v_text(&run.v2v))?;
    fs::write(&paths.scenario, scenario.to_json() + "\n").map_err(io_err(&paths.scenario))?;
    Ok(paths)
}

pub fn cmd_run(scenario: &Scenario, out: &Path) -> Result<(RunArtifact, RunOutputs), HarnessError> {
    let run = run_scenario(scenario, RunOptions::full())?;
    let paths = write_run(scenario, &run, out)?;
    Ok((run, paths))
}

/// Centralised optimum of every vehicle the scenario fields.
pub fn cmd_oracle(scenario: &Scenario) -> Result<OptimumReport, HarnessError> {
    let costs = fleet_costs(scenario)?;
    centralized_optimum(&costs, scenario.range, DEFAULT_TOL)
        .map_err(|e| HarnessError::Usage(format!("oracle failed: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub value: f64,
    pub seed: u64,
    /// Rounds from activation to consensus; empty when none was detected.
    pub converged_round: Option<u64>,
    #[serde(rename = "L1_total")]
    pub l1_total: Option<f64>,
    #[serde(rename = "L2_total")]
    pub l2_total: f64,
    pub improvement_pct: Option<f64>,
}

/// `(uncontrolled - controlled) / uncontrolled`, in percent.
pub fn improvement_pct(l1: f64, l2: f64) -> f64 {
    (l1 - l2) / l1 * 100.0
}

/// Summary row of one run against the first uncontrolled and first
/// controlled sections.
pub fn summarize(scenario: &Scenario, value: f64, run: &RunArtifact) -> SummaryRow {
    let totals = reported_totals(run);
    let l1_total = scenario.road.first_uncontrolled().map(|i| totals[i]);
    let l2_total = totals[scenario.road.first_controlled().expect("validated")];
    SummaryRow {
        value,
        seed: run.seed,
        converged_round: run.converged_after_activation(),
        l1_total,
        l2_total,
        improvement_pct: l1_total.map(|l1| improvement_pct(l1, l2_total)),
    }
}

/// Copy of `scenario` with one sweep axis set.
pub fn with_axis(scenario: &Scenario, axis: SweepAxis, value: f64) -> Result<Scenario, HarnessError> {
    check_sweep_value(axis, value).map_err(HarnessError::Usage)?;
    let mut s = scenario.clone();
    match axis {
        SweepAxis::Compliance => s.compliance = value,
        SweepAxis::Radius => match s.comm {
            CommModel::Radius { .. } => s.comm = CommModel::Radius { r_m: value },
            _ => return Err(HarnessError::Usage("radius sweep needs a radius communication model".into())),
        },
    }
    Ok(s)
}

/// Runs every (value, seed) cell, seeds `base + 0 .. base + seeds`. Rows come
/// back ordered by value, then seed.
pub fn sweep(scenario: &Scenario, axis: SweepAxis, values: &[f64], seeds: usize) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut cells = Vec::with_capacity(values.len() * seeds);
    for &v in values {
        for i in 0..seeds as u64 {
            let mut s = with_axis(scenario, axis, v)?;
            s.seed = scenario.seed.wrapping_add(i);
            cells.push((v, s));
        }
    }
    cells
        .par_iter()
        .map(|(v, s)| {
            let run = run_scenario(s, RunOptions::summary())?;
            Ok(summarize(s, *v, &run))
        })
        .collect()
}

pub fn cmd_sweep(
    scenario: &Scenario,
    axis: SweepAxis,
    values: &[f64],
    seeds: usize,
    out: &Path,
) -> Result<(Vec<SummaryRow>, PathBuf), HarnessError> {
    if values.is_empty() || seeds == 0 {
        return Err(HarnessError::Usage("a sweep needs at least one value and one seed".into()));
    }
    let rows = sweep(scenario, axis, values, seeds)?;
    prepare_dir(out)?;
    let path = out.join(&scenario.outputs.summary);
    write_csv(&path, scenario, rows.iter())?;
    Ok((rows, path))
}

/// Audits a message log, with the V2V log and the fleet's curve parameters
/// when available.
pub fn cmd_audit(log: &Path, v2v: Option<&Path>, scenario: Option<&Scenario>) -> Result<AuditVerdict, HarnessError> {
    let text = fs::read_to_string(log).map_err(io_err(log))?;
    let records = parse_records(&text);
    let v2v_records = match v2v {
        Some(p) => Some(parse_records(&fs::read_to_string(p).map_err(io_err(p))?)),
        None => None,
    };
    let mut coefficients = Vec::new();
    if let Some(s) = scenario {
        for f in fleet_costs(s)? {
            coefficients.extend(f.shape().coefficients());
        }
    }
    let ctx = AuditContext { v2v: v2v_records.as_deref(), recommended: None, coefficients: &coefficients };
    Ok(audit_privacy(&records, &ctx))
}

/// Audits a run held in memory, including the V2V payload check.
pub fn audit_run(run: &RunArtifact) -> AuditVerdict {
    let log = run.log.to_raw();
    let v2v = parse_records(&v2v_text(&run.v2v));
    let recommended = run.recommendation_map();
    let ctx = AuditContext { v2v: Some(&v2v), recommended: Some(&recommended), coefficients: &run.coefficients };
    audit_privacy(&log, &ctx)
}

/// Speeds held in the three EV phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhasePlan {
    /// Advisory first, then its final mean minus and plus the offset.
    Advisory,
    /// All three phases forced to one speed.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRow {
    pub phase: u32,
    /// Common speed at the end of the phase, km/h.
    pub speed_kmh: f64,
    /// Mean over the phase's rounds of the fleet-mean cost rate.
    pub mean_rate: f64,
}

#[derive(Debug, Clone)]
pub struct PhaseReport {
    pub phases: [PhaseRow; 3],
    pub run: RunArtifact,
}

fn mean_rate(run_rounds: &[crate::mobility::RoundMetrics]) -> f64 {
    let per_vehicle = |m: &crate::mobility::RoundMetrics| {
        let n: usize = m.fleet_per_section.iter().sum();
        if n == 0 {
            0.0
        } else {
            m.total_rate / n as f64
        }
    };
    run_rounds.iter().map(per_vehicle).sum::<f64>() / run_rounds.len().max(1) as f64
}

/// Three phases of `ev_phases.phase_s` seconds each.
pub fn run_three_phase(scenario: &Scenario, plan: PhasePlan, options: RunOptions) -> Result<PhaseReport, HarnessError> {
    let phases = scenario
        .ev_phases
        .ok_or_else(|| ConfigError::invalid("ev_phases", "three-phase run needs ev_phases"))?;
    let rounds = phases.phase_s.ceil() as u64;
    let range: SpeedRange = scenario.range;
    let mut sim = Simulation::new(scenario, options)?;
    let mut speeds = [0.0; 3];
    for phase in 0..3 {
        let mode = match (plan, phase) {
            (PhasePlan::Constant(v), _) => RoundMode::Forced(v),
            (PhasePlan::Advisory, 0) => RoundMode::Advisory,
            (PhasePlan::Advisory, 1) => RoundMode::Forced(range.clamp(speeds[0] - phases.offset_kmh)),
            (PhasePlan::Advisory, _) => RoundMode::Forced(range.clamp(speeds[0] + phases.offset_kmh)),
        };
        for _ in 0..rounds {
            sim.step(mode)?;
        }
        let recs = sim.recommendations();
        speeds[phase] = recs.iter().sum::<f64>() / recs.len().max(1) as f64;
    }
    let run = sim.finish();
    let per_round = run.metrics.rounds();
    let r = rounds as usize;
    let row = |p: usize| PhaseRow {
        phase: p as u32 + 1,
        speed_kmh: speeds[p],
        mean_rate: mean_rate(&per_round[p * r..(p + 1) * r]),
    };
    Ok(PhaseReport { phases: [row(0), row(1), row(2)], run })
}

pub fn cmd_ev_threephase(scenario: &Scenario, out: &Path) -> Result<PhaseReport, HarnessError> {
    let report = run_three_phase(scenario, PhasePlan::Advisory, RunOptions::full())?;
    write_run(scenario, &report.run, out)?;
    let path = out.join(&scenario.outputs.phases);
    write_csv(&path, scenario, report.phases.iter())?;
    Ok(report)
}

/// Minimum-cost speed of a single curve, for one-vehicle checks.
pub fn single_vehicle_optimum(scenario: &Scenario) -> Result<f64, HarnessError> {
    let costs = fleet_costs(scenario)?;
    match costs.as_slice() {
        [f] => Ok(find_min_speed(f.shape(), scenario.range, DEFAULT_TOL).speed()),
        _ => Err(HarnessError::Usage(format!("expected one vehicle, found {}", costs.len()))),
    }
}
