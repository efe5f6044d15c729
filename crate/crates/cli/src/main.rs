//! `sas`: run speed-advisory experiments from scenario files.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use speed_advisory::base_station::AuditVerdict;
use speed_advisory::harness::{self, HarnessError};
use speed_advisory::scenario::{load_scenario, Scenario, SweepAxis};

#[derive(Parser)]
#[command(name = "sas", version, about = "Consensus speed advisory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario, HarnessError> {
        let mut s = load_scenario(&self.scenario)?;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace, metrics and message logs.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the centralised optimum of the scenario's fleet.
    Oracle {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Run the scenario once per value and seed and write a summary CSV.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// `compliance=0,0.5,1` or `radius=15,50,300`; defaults to the
        /// scenario's own sweep.
        #[arg(long)]
        sweep: Option<String>,
        /// Number of seeds per value, counting up from the base seed.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a message log for anything beyond scalar reports and sums.
    Audit {
        /// Base-station message log.
        log: PathBuf,
        /// V2V log written next to it.
        #[arg(long)]
        v2v: Option<PathBuf>,
        /// Scenario whose curve parameters must not appear in the logs.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Advisory phase followed by forced slower and faster phases.
    EvThreephase {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_sweep(spec: &str) -> Result<(SweepAxis, Vec<f64>)> {
    let (axis, values) = spec.split_once('=').context("expected <axis>=<v1,v2,...>")?;
    let axis: SweepAxis = axis.trim().parse().map_err(anyhow::Error::msg)?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad sweep value `{v}`")))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    Ok((axis, values))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, out } => {
            let s = scenario.load()?;
            let (run, paths) = harness::cmd_run(&s, &out)?;
            let totals = harness::reported_totals(&run);
            for (name, total) in run.section_names.iter().zip(&totals) {
                println!("{name}: {total}");
            }
            match run.converged_after_activation() {
                Some(r) => println!("consensus after {r} rounds"),
                None => println!("no consensus detected"),
            }
            if run.flags.gain_violations > 0 {
                println!("warning: gain at or above the stability bound in {} rounds", run.flags.gain_violations);
            }
            info!("wrote {}", paths.trace.display());
        }
        Command::Oracle { scenario } => {
            let s = scenario.load()?;
            let r = harness::cmd_oracle(&s)?;
            println!("y_star_kmh: {}", r.y_star);
            println!("gradient_residual: {}", r.gradient_residual);
            println!("total_cost_at_opt: {}", r.total_cost_at_opt);
            println!("on_boundary: {}", r.on_boundary);
        }
        Command::Sweep { scenario, sweep, seeds, out } => {
            let s = scenario.load()?;
            let (axis, values, default_seeds) = match (sweep, &s.sweep) {
                (Some(spec), cfg) => {
                    let (a, v) = parse_sweep(&spec)?;
                    (a, v, cfg.as_ref().map_or(5, |c| c.seeds))
                }
                (None, Some(cfg)) => (cfg.axis, cfg.values.clone(), cfg.seeds),
                (None, None) => bail!("no --sweep given and the scenario defines none"),
            };
            let (rows, path) = harness::cmd_sweep(&s, axis, &values, seeds.unwrap_or(default_seeds), &out)?;
            println!("{} rows written to {}", rows.len(), path.display());
        }
        Command::Audit { log, v2v, scenario } => {
            let s = scenario.map(load_scenario).transpose()?;
            match harness::cmd_audit(&log, v2v.as_deref(), s.as_ref())? {
                AuditVerdict::Pass => println!("PASS"),
                AuditVerdict::Fail(findings) => {
                    println!("FAIL");
                    for f in findings {
                        println!("  {:?} record {}: {}", f.stream, f.index, f.reason);
                    }
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
        Command::EvThreephase { scenario, out } => {
            let s = scenario.load()?;
            let report = harness::cmd_ev_threephase(&s, &out)?;
            for p in &report.phases {
                println!("phase {}: speed {:.3} km/h, mean {:.6} kWh/km", p.phase, p.speed_kmh, p.mean_rate);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
