#![allow(dead_code)]

use std::path::PathBuf;

use speed_advisory::cost::{CostFunction, CurveShape, EvPowerCurve, SpeedRange};
use speed_advisory::scenario::{load_scenario, Scenario};

pub const SHIPPED: [&str; 7] = [
    "static_fig3",
    "static_fig4",
    "radius_sweep",
    "dynamic_case1",
    "dynamic_case2",
    "dynamic_case3",
    "ev_threephase",
];

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

pub fn shipped(name: &str) -> Scenario {
    load_scenario(scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn preset(name: &str, range: SpeedRange) -> CostFunction {
    CostFunction::preset(name, range).unwrap()
}

pub fn ev(alpha0: f64, alpha1: f64, alpha2: f64, alpha3: f64, range: SpeedRange) -> CostFunction {
    CostFunction::new(CurveShape::Ev(EvPowerCurve { alpha0, alpha1, alpha2, alpha3 }), range).unwrap()
}

pub fn range(lo: f64, hi: f64) -> SpeedRange {
    SpeedRange::new(lo, hi).unwrap()
}
