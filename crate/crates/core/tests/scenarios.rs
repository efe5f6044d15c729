mod common;

use std::collections::BTreeSet;

use serde_json::{json, Value};
use speed_advisory::harness::{
    cmd_sweep, improvement_pct, run_three_phase, single_vehicle_optimum, sweep, PhasePlan,
};
use speed_advisory::mobility::{run_scenario, RunOptions};
use speed_advisory::scenario::{parse_scenario, FleetConfig, Scenario, SweepAxis};

fn edited(s: &Scenario, edit: impl FnOnce(&mut Value)) -> Result<Scenario, speed_advisory::scenario::ConfigError> {
    let mut v: Value = serde_json::from_str(&s.to_json()).unwrap();
    edit(&mut v);
    parse_scenario(&v.to_string())
}

#[test]
fn every_shipped_scenario_round_trips() {
    for name in common::SHIPPED {
        let s = common::shipped(name);
        let again = parse_scenario(&s.to_json()).unwrap();
        assert_eq!(s, again, "{name}");
    }
}

#[test]
fn static_fig3_contents() {
    let s = common::shipped("static_fig3");
    let FleetConfig::Fixed { groups, .. } = &s.fleet else { panic!("fixed fleet expected") };
    let counts: Vec<u32> = groups.iter().map(|g| g.count).collect();
    assert_eq!(counts, [32, 8]);
    assert_eq!((s.activation_round(), s.rounds()), (300, 600));
}

#[test]
fn dynamic_case1_spawns_650_vehicles_at_their_free_speeds() {
    let s = common::shipped("dynamic_case1");
    let run = run_scenario(&s, RunOptions::full()).unwrap();
    let ids: BTreeSet<_> = run.trace.iter().map(|t| t.vehicle).collect();
    assert_eq!(ids.len(), 650);
    // uncontrolled first section: everyone cruises in the free-speed band
    // once past the entry transient
    let l1: Vec<f64> = run.trace.iter().filter(|t| t.section == 0 && t.position_m > 1000.0).map(|t| t.actual_speed_kmh).collect();
    assert!(!l1.is_empty());
    assert!(l1.iter().all(|&v| (80.0..=100.0).contains(&v)), "{:?}", l1.iter().cloned().fold((f64::MAX, f64::MIN), |a, v| (a.0.min(v), a.1.max(v))));
}

#[test]
fn out_of_range_compliance_names_the_field() {
    let err = edited(&common::shipped("static_fig3"), |v| v["compliance"] = json!(1.5)).unwrap_err();
    assert_eq!(err.field(), Some("compliance"));
}

#[test]
fn compliance_sweep_rows_are_consistent_with_their_totals() {
    let s = common::shipped("dynamic_case2");
    let dir = tempfile::tempdir().unwrap();
    let (rows, path) = cmd_sweep(&s, SweepAxis::Compliance, &[0.0, 0.5, 1.0], 5, dir.path()).unwrap();
    assert_eq!(rows.len(), 15);
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (l1, l2, pct) = (col("L1_total"), col("L2_total"), col("improvement_pct"));
    let mut n = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let get = |i: usize| rec[i].parse::<f64>().unwrap();
        let expected = improvement_pct(get(l1), get(l2));
        assert!((get(pct) - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{rec:?}");
        n += 1;
    }
    assert_eq!(n, 15);
    let seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, (s.seed..s.seed + 5).collect());
}

#[test]
fn sweeps_are_reproducible() {
    let s = common::shipped("radius_sweep");
    let values = [50.0, 300.0];
    assert_eq!(sweep(&s, SweepAxis::Radius, &values, 2).unwrap(), sweep(&s, SweepAxis::Radius, &values, 2).unwrap());
    assert!(sweep(&common::shipped("ev_threephase"), SweepAxis::Radius, &values, 1).is_err());
}

fn short_ev(count: usize) -> Scenario {
    edited(&common::shipped("ev_threephase"), |v| {
        v["fleet"]["count"] = json!(count);
        v["ev_phases"]["phase_s"] = json!(300);
        v["duration_s"] = json!(900);
    })
    .unwrap()
}

#[test]
fn constant_speed_makes_the_phases_indistinguishable() {
    let report = run_three_phase(&short_ev(20), PhasePlan::Constant(50.0), RunOptions::summary()).unwrap();
    let [a, b, c] = report.phases.map(|p| p.mean_rate);
    for x in [b, c] {
        assert!((x - a).abs() <= 1e-12 * a, "{a} {b} {c}");
    }
}

#[test]
fn single_ev_advisory_phase_finds_its_own_minimum() {
    let s = short_ev(1);
    let report = run_three_phase(&s, PhasePlan::Advisory, RunOptions::summary()).unwrap();
    let own = single_vehicle_optimum(&s).unwrap();
    assert!((report.phases[0].speed_kmh - own).abs() < 0.01, "{} vs {own}", report.phases[0].speed_kmh);
    assert!(report.phases[0].mean_rate < report.phases[1].mean_rate);
    assert!(report.phases[0].mean_rate < report.phases[2].mean_rate);
}
