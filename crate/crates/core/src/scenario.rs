//! Experiment descriptions.
//!
//! A scenario is a JSON document naming the road, the fleet, the
//! algorithm parameters and the communication model. Defaults are filled
//! in at load time, so serialising a loaded scenario gives a complete,
//! explicit description that reloads to the same value.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_station::ReportingMode;
use crate::consensus::{EtaSetting, DEFAULT_EPSILON_KMH, DEFAULT_HOLD_ROUNDS};
use crate::cost::{CostFunction, CurveShape, EvPowerCurve, SpeedRange};
use crate::mobility::metrics::DEFAULT_WINDOW;
use crate::mobility::{RoadLayout, VehicleClass};

/// Feedback gain used by highway scenarios when none is given.
pub const DEFAULT_HIGHWAY_MU: f64 = 0.01;
/// Feedback gain used by EV scenarios when none is given.
pub const DEFAULT_EV_MU: f64 = 0.001;
/// Rounds per connectivity check of the neighbour graphs.
pub const DEFAULT_CHECK_WINDOW: usize = 30;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), reason: reason.into() }
    }

    /// Field path of an invalid entry.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            ConfigError::Io { .. } => None,
        }
    }
}

/// A curve given by preset name or written out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveSpec {
    Preset(String),
    Shape(CurveShape),
}

impl CurveSpec {
    pub fn shape(&self) -> Result<CurveShape, String> {
        match self {
            CurveSpec::Preset(name) => CurveShape::preset(name).map_err(|e| e.to_string()),
            CurveSpec::Shape(s) => Ok(*s),
        }
    }

    pub fn build(&self, range: SpeedRange) -> Result<CostFunction, String> {
        CostFunction::new(self.shape()?, range).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialSpeed {
    /// Every vehicle starts at this speed, km/h.
    Common(f64),
    /// Drawn per vehicle, km/h.
    Uniform([f64; 2]),
}

impl InitialSpeed {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            InitialSpeed::Common(v) => (v, v),
            InitialSpeed::Uniform([lo, hi]) => (lo, hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetGroup {
    pub curve: CurveSpec,
    pub count: u32,
    /// Drawn uniformly from all classes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<VehicleClass>,
}

fn default_row_gap() -> f64 {
    25.0
}

fn all_classes() -> Vec<VehicleClass> {
    VehicleClass::ALL.to_vec()
}

fn default_passenger_mass() -> f64 {
    80.0
}

fn default_ancillary() -> [f64; 2] {
    [0.2, 2.2]
}

fn default_passengers() -> [u32; 2] {
    [1, 5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FleetConfig {
    /// A fixed set of vehicles present from the start. Vehicles are placed
    /// in rows of one per lane, `row_gap_m` apart, and hold their initial
    /// speed until the advisory switches on.
    Fixed {
        groups: Vec<FleetGroup>,
        initial_speed: InitialSpeed,
        #[serde(default = "default_row_gap")]
        row_gap_m: f64,
    },
    /// Vehicles entering at the start of the road at a fixed interval.
    Spawn {
        interval_s: f64,
        cutoff_s: f64,
        curves: Vec<CurveSpec>,
        #[serde(default = "all_classes")]
        classes: Vec<VehicleClass>,
        free_speed: [f64; 2],
    },
    /// Electric vehicles sharing a base curve. Each vehicle draws its
    /// ancillary load and passenger count; passengers scale the linear
    /// (rolling) term by total mass over curb mass.
    Ev {
        count: u32,
        base: EvPowerCurve,
        #[serde(default = "default_ancillary")]
        ancillary_kw: [f64; 2],
        #[serde(default = "default_passengers")]
        passengers: [u32; 2],
        #[serde(default = "default_passenger_mass")]
        passenger_mass_kg: f64,
        curb_mass_kg: f64,
        initial_speed: InitialSpeed,
        #[serde(default = "default_row_gap")]
        row_gap_m: f64,
    },
}

impl FleetConfig {
    pub fn is_ev(&self) -> bool {
        matches!(self, FleetConfig::Ev { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

/// Feedback gain: a number, or `"auto"` for a fixed fraction of the
/// stability bound of the fleet currently taking part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSetting {
    Fixed(f64),
    Auto(AutoTag),
}

impl GainSetting {
    pub const AUTO: GainSetting = GainSetting::Auto(AutoTag::Auto);
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON_KMH
}

fn default_hold() -> usize {
    DEFAULT_HOLD_ROUNDS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<EtaSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<GainSetting>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_hold")]
    pub hold_rounds: usize,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self { eta: None, mu: None, epsilon: DEFAULT_EPSILON_KMH, hold_rounds: DEFAULT_HOLD_ROUNDS }
    }
}

impl ConsensusConfig {
    pub fn eta(&self) -> EtaSetting {
        self.eta.unwrap_or_default()
    }

    pub fn mu(&self) -> GainSetting {
        self.mu.unwrap_or(GainSetting::Fixed(DEFAULT_HIGHWAY_MU))
    }
}

/// Who hears whom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommModel {
    /// Vehicles within `r_m` metres of road distance.
    Radius { r_m: f64 },
    /// Each directed link present independently every round.
    Random { p_edge: f64 },
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Compliance,
    Radius,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "compliance" => Ok(SweepAxis::Compliance),
            "radius" => Ok(SweepAxis::Radius),
            other => Err(format!("unknown sweep axis `{other}` (expected compliance or radius)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: usize,
}

fn default_phase_s() -> f64 {
    1200.0
}

fn default_offset() -> f64 {
    15.0
}

/// Three equal phases: the advisory, then common speeds forced below and
/// above the phase-one recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvPhases {
    #[serde(default = "default_phase_s")]
    pub phase_s: f64,
    #[serde(default = "default_offset")]
    pub offset_kmh: f64,
}

impl Default for EvPhases {
    fn default() -> Self {
        Self { phase_s: default_phase_s(), offset_kmh: default_offset() }
    }
}

fn trace_name() -> String {
    "trace.csv".into()
}
fn metrics_name() -> String {
    "metrics.csv".into()
}
fn messages_name() -> String {
    "messages.log".into()
}
fn v2v_name() -> String {
    "v2v.log".into()
}
fn summary_name() -> String {
    "summary.csv".into()
}
fn phases_name() -> String {
    "phases.csv".into()
}

/// Output file names, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default = "trace_name")]
    pub trace: String,
    #[serde(default = "metrics_name")]
    pub metrics: String,
    #[serde(default = "messages_name")]
    pub messages: String,
    #[serde(default = "v2v_name")]
    pub v2v: String,
    #[serde(default = "summary_name")]
    pub summary: String,
    #[serde(default = "phases_name")]
    pub phases: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            trace: trace_name(),
            metrics: metrics_name(),
            messages: messages_name(),
            v2v: v2v_name(),
            summary: summary_name(),
            phases: phases_name(),
        }
    }
}

fn default_compliance() -> f64 {
    1.0
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

fn default_check_window() -> usize {
    DEFAULT_CHECK_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub road: RoadLayout,
    #[serde(default)]
    pub range: SpeedRange,
    pub fleet: FleetConfig,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    pub comm: CommModel,
    #[serde(default)]
    pub activation_s: f64,
    pub duration_s: f64,
    #[serde(default = "default_compliance")]
    pub compliance: f64,
    #[serde(default = "default_window")]
    pub metrics_window: usize,
    #[serde(default = "default_check_window")]
    pub connectivity_window: usize,
    #[serde(default)]
    pub reporting: ReportingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ev_phases: Option<EvPhases>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub outputs: OutputPaths,
}

impl Scenario {
    /// Number of 1 s rounds in the run.
    pub fn rounds(&self) -> u64 {
        self.duration_s.ceil() as u64
    }

    /// First round at which the advisory runs.
    pub fn activation_round(&self) -> u64 {
        self.activation_s.ceil() as u64
    }

    /// Fills in parameter defaults that depend on the fleet kind.
    pub fn resolve_defaults(&mut self) {
        let c = &mut self.consensus;
        c.eta.get_or_insert(EtaSetting::default());
        let mu = if self.fleet.is_ev() { DEFAULT_EV_MU } else { DEFAULT_HIGHWAY_MU };
        c.mu.get_or_insert(GainSetting::Fixed(mu));
        if self.fleet.is_ev() {
            self.ev_phases.get_or_insert_with(EvPhases::default);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.road.sections.is_empty() {
            return Err(bad("road.sections", "at least one section is required"));
        }
        for (i, s) in self.road.sections.iter().enumerate() {
            if !(s.length_m > 0.0 && s.length_m.is_finite()) {
                return Err(bad(format!("road.sections[{i}].length_m"), "must be positive"));
            }
            if s.lanes == 0 {
                return Err(bad(format!("road.sections[{i}].lanes"), "must be at least 1"));
            }
        }
        if self.road.first_controlled().is_none() {
            return Err(bad("road.sections", "no controlled section"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(bad("duration_s", "must be positive"));
        }
        if !(self.activation_s >= 0.0 && self.activation_s < self.duration_s) {
            return Err(bad("activation_s", format!("must lie in [0, duration_s = {})", self.duration_s)));
        }
        if !(0.0..=1.0).contains(&self.compliance) {
            return Err(bad("compliance", format!("{} is outside [0, 1]", self.compliance)));
        }
        if self.metrics_window == 0 {
            return Err(bad("metrics_window", "must be at least 1"));
        }
        if self.connectivity_window == 0 {
            return Err(bad("connectivity_window", "must be at least 1"));
        }
        self.validate_consensus()?;
        self.validate_comm()?;
        self.validate_fleet()?;
        if let Some(p) = &self.ev_phases {
            if !self.fleet.is_ev() {
                return Err(bad("ev_phases", "only valid with an ev fleet"));
            }
            if !(p.phase_s > 0.0) {
                return Err(bad("ev_phases.phase_s", "must be positive"));
            }
            if !(p.offset_kmh >= 0.0 && p.offset_kmh.is_finite()) {
                return Err(bad("ev_phases.offset_kmh", "must be non-negative"));
            }
            if self.duration_s < 3.0 * p.phase_s {
                return Err(bad("duration_s", "shorter than three phases"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(bad("sweep.values", "at least one value is required"));
            }
            if s.seeds == 0 {
                return Err(bad("sweep.seeds", "must be at least 1"));
            }
            for (i, &v) in s.values.iter().enumerate() {
                check_sweep_value(s.axis, v).map_err(|r| bad(format!("sweep.values[{i}]"), r))?;
            }
        }
        Ok(())
    }

    fn validate_consensus(&self) -> Result<(), ConfigError> {
        let c = &self.consensus;
        if let Some(EtaSetting::Fixed(e)) = c.eta {
            if !(e > 0.0 && e <= 1.0) {
                return Err(bad("consensus.eta", format!("{e} is outside (0, 1]")));
            }
        }
        if let Some(GainSetting::Fixed(mu)) = c.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(bad("consensus.mu", format!("{mu} must be positive")));
            }
        }
        if !(c.epsilon > 0.0) {
            return Err(bad("consensus.epsilon", "must be positive"));
        }
        Ok(())
    }

    fn validate_comm(&self) -> Result<(), ConfigError> {
        match self.comm {
            CommModel::Radius { r_m } if !(r_m >= 0.0 && r_m.is_finite()) => {
                Err(ConfigError::invalid("comm.radius.r_m", "must be non-negative"))
            }
            CommModel::Random { p_edge } if !(0.0..=1.0).contains(&p_edge) => {
                Err(ConfigError::invalid("comm.random.p_edge", format!("{p_edge} is outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    fn validate_fleet(&self) -> Result<(), ConfigError> {
        let range = self.range;
        let in_range = |field: &str, lo: f64, hi: f64| {
            if lo > hi || !range.contains(lo) || !range.contains(hi) {
                Err(bad(field, format!("[{lo}, {hi}] is not inside the speed range {range}")))
            } else {
                Ok(())
            }
        };
        match &self.fleet {
            FleetConfig::Fixed { groups, initial_speed, row_gap_m } => {
                if groups.is_empty() || groups.iter().all(|g| g.count == 0) {
                    return Err(bad("fleet.groups", "fleet is empty"));
                }
                for (i, g) in groups.iter().enumerate() {
                    g.curve.build(range).map_err(|r| bad(format!("fleet.groups[{i}].curve"), r))?;
                }
                let (lo, hi) = initial_speed.bounds();
                in_range("fleet.initial_speed", lo, hi)?;
                if !(*row_gap_m >= 0.0) {
                    return Err(bad("fleet.row_gap_m", "must be non-negative"));
                }
            }
            FleetConfig::Spawn { interval_s, cutoff_s, curves, classes, free_speed } => {
                if !(*interval_s > 0.0) {
                    return Err(bad("fleet.interval_s", "must be positive"));
                }
                if !(*cutoff_s >= 0.0) {
                    return Err(bad("fleet.cutoff_s", "must be non-negative"));
                }
                if curves.is_empty() {
                    return Err(bad("fleet.curves", "at least one curve is required"));
                }
                for (i, c) in curves.iter().enumerate() {
                    c.build(range).map_err(|r| bad(format!("fleet.curves[{i}]"), r))?;
                }
                if classes.is_empty() {
                    return Err(bad("fleet.classes", "at least one class is required"));
                }
                in_range("fleet.free_speed", free_speed[0], free_speed[1])?;
                if self.road.ring {
                    return Err(bad("road.ring", "a spawned fleet needs an open road"));
                }
            }
            FleetConfig::Ev { count, base, ancillary_kw, passengers, passenger_mass_kg, curb_mass_kg, initial_speed, .. } => {
                if *count == 0 {
                    return Err(bad("fleet.count", "fleet is empty"));
                }
                if !(ancillary_kw[0] > 0.0 && ancillary_kw[0] <= ancillary_kw[1]) {
                    return Err(bad("fleet.ancillary_kw", "needs 0 < lo <= hi"));
                }
                if passengers[0] > passengers[1] {
                    return Err(bad("fleet.passengers", "needs lo <= hi"));
                }
                if !(*curb_mass_kg > 0.0) {
                    return Err(bad("fleet.curb_mass_kg", "must be positive"));
                }
                if !(*passenger_mass_kg >= 0.0) {
                    return Err(bad("fleet.passenger_mass_kg", "must be non-negative"));
                }
                for alpha0 in [ancillary_kw[0], ancillary_kw[1]] {
                    let curve = EvPowerCurve { alpha0, ..*base };
                    CostFunction::new(CurveShape::Ev(curve), range).map_err(|e| bad("fleet.base", e.to_string()))?;
                }
                let (lo, hi) = initial_speed.bounds();
                in_range("fleet.initial_speed", lo, hi)?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }
}

fn bad(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::invalid(field, reason)
}

pub(crate) fn check_sweep_value(axis: SweepAxis, v: f64) -> Result<(), String> {
    match axis {
        SweepAxis::Compliance if !(0.0..=1.0).contains(&v) => Err(format!("compliance {v} is outside [0, 1]")),
        SweepAxis::Radius if !(v >= 0.0 && v.is_finite()) => Err(format!("radius {v} must be non-negative")),
        _ => Ok(()),
    }
}

/// Parses, fills defaults and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        ConfigError::Invalid { field, reason: e.into_inner().to_string() }
    })?;
    scenario.resolve_defaults();
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}
