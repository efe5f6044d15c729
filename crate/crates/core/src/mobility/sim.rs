//! The synchronous round loop.
//!
//! Each 1 s round: arrivals enter, vehicles in controlled sections form the
//! advisory group, the group's neighbour graph is drawn, every member
//! reports `f'_i(s_i)` to the base station, the broadcast sum drives one
//! consensus step, vehicles steer toward their targets, and costs accrue.

use std::collections::{BTreeMap, VecDeque};

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::metrics::{step_accrual, MetricsAccumulator};
use super::road::RoadLayout;
use super::spawn::{spawn_process, Arrival, FleetMix};
use super::vehicle::{kinematic_step, target_speed, VehicleClass, VehicleSpec, VehicleState};
use crate::base_station::{BaseStation, GradientReport, MessageLog, MissingPolicy, StationError, V2vMessage};
use crate::consensus::{
    build_matrix, consensus_step, detect_consensus, mu_upper_bound, ConsensusDetection, ConsensusError, SpeedState,
    DEFAULT_MU_FRACTION,
};
use crate::cost::{CostFunction, CurveShape, EvPowerCurve, SpeedRange};
use crate::graph::{radius_graph, radius_graph_on_ring, random_graph, union_strongly_connected, NeighborGraph};
use crate::scenario::{CommModel, ConfigError, FleetConfig, GainSetting, InitialSpeed, Scenario};
use crate::VehicleId;

/// Round length, s.
pub const DT: f64 = 1.0;

const FLEET_STREAM: u64 = 0;
const GRAPH_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Station(#[from] StationError),
}

/// What a run keeps in memory besides the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Per-vehicle, per-round rows.
    pub trace: bool,
    /// V2V broadcasts.
    pub v2v: bool,
    /// Base-station message log.
    pub keep_log: bool,
}

impl RunOptions {
    pub fn full() -> Self {
        Self { trace: true, v2v: true, keep_log: true }
    }

    /// Metrics and recommendation history only.
    pub fn summary() -> Self {
        Self { trace: false, v2v: false, keep_log: false }
    }
}

impl Default for RunOptions {
    fn default() -> Self {
        Self::full()
    }
}

/// How recommendations are produced in a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoundMode {
    /// Reports, aggregation and one consensus step.
    Advisory,
    /// Every vehicle in a controlled section is told this speed and
    /// adopts it at once; nothing is exchanged.
    Forced(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub round: u64,
    pub vehicle: VehicleId,
    /// Section the step started in.
    pub section: usize,
    pub position_m: f64,
    pub actual_speed_kmh: f64,
    /// Recommendation published this round, if the vehicle received one.
    pub recommended_speed_kmh: Option<f64>,
    pub cost_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunFlags {
    /// Rounds whose gain was not below the stability bound of the group.
    pub gain_violations: u64,
    /// Windows whose union graph was not strongly connected.
    pub connectivity_warnings: u64,
    pub connectivity_checks: u64,
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub scenario: String,
    pub seed: u64,
    pub section_names: Vec<String>,
    pub trace: Vec<TraceRow>,
    pub metrics: MetricsAccumulator,
    pub log: MessageLog,
    pub v2v: Vec<V2vMessage>,
    /// Advisory state `s(k)` at the start of every advisory round.
    pub history: Vec<SpeedState>,
    pub convergence: ConsensusDetection,
    pub activation_round: u64,
    pub rounds: u64,
    pub flags: RunFlags,
    /// Every curve parameter in the fleet, for the privacy audit.
    pub coefficients: Vec<f64>,
    pub ev: bool,
}

impl RunArtifact {
    /// Rounds from activation to detected consensus.
    pub fn converged_after_activation(&self) -> Option<u64> {
        self.convergence.round.map(|r| r.saturating_sub(self.activation_round))
    }

    /// `s_i(k)` as sent over V2V, keyed by round and vehicle.
    pub fn recommendation_map(&self) -> BTreeMap<(u64, VehicleId), f64> {
        let mut map = BTreeMap::new();
        for s in &self.history {
            for (id, v) in s.ids.iter().zip(&s.speeds) {
                map.insert((s.round, *id), *v);
            }
        }
        map
    }

    /// Time-integrated cost of one section (g or kWh).
    pub fn section_total(&self, section: usize) -> f64 {
        self.metrics.section_totals()[section]
    }
}

#[derive(Debug, Clone)]
struct Vehicle {
    spec: VehicleSpec,
    state: VehicleState,
    recommendation: Option<f64>,
}

pub struct Simulation {
    road: RoadLayout,
    range: SpeedRange,
    eta: crate::consensus::EtaSetting,
    gain: GainSetting,
    comm: CommModel,
    activation_round: u64,
    epsilon: f64,
    hold_rounds: usize,
    connectivity_window: usize,
    options: RunOptions,
    vehicles: Vec<Vehicle>,
    pending: VecDeque<Arrival>,
    graph_rng: ChaCha8Rng,
    station: BaseStation,
    metrics: MetricsAccumulator,
    trace: Vec<TraceRow>,
    v2v: Vec<V2vMessage>,
    history: Vec<SpeedState>,
    graphs: VecDeque<NeighborGraph>,
    flags: RunFlags,
    coefficients: Vec<f64>,
    round: u64,
    name: String,
    seed: u64,
    ev: bool,
}

pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_initial<R: Rng + ?Sized>(initial: &InitialSpeed, rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    match *initial {
        InitialSpeed::Common(v) => v,
        InitialSpeed::Uniform([lo, hi]) => lo + (hi - lo) * u,
    }
}

fn build_fleet(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Result<(Vec<Vehicle>, VecDeque<Arrival>), ConfigError> {
    let range = scenario.range;
    let lanes = scenario.road.sections[0].lanes.max(1) as usize;
    let placed = |index: usize, row_gap: f64, spec: VehicleSpec| {
        let row = (index / lanes) as f64;
        let state = VehicleState::at(row * row_gap, spec.free_speed);
        Vehicle { spec, state, recommendation: None }
    };
    let mut vehicles = Vec::new();
    let mut pending = VecDeque::new();
    match &scenario.fleet {
        FleetConfig::Fixed { groups, initial_speed, row_gap_m } => {
            let mut id = 0u32;
            for (g, group) in groups.iter().enumerate() {
                let cost = group
                    .curve
                    .build(range)
                    .map_err(|r| ConfigError::invalid(format!("fleet.groups[{g}].curve"), r))?;
                for _ in 0..group.count {
                    let drawn = *VehicleClass::ALL.choose(rng).expect("classes");
                    let class = group.class.unwrap_or(drawn);
                    let free_speed = draw_initial(initial_speed, rng);
                    let compliant = rng.gen::<f64>() < scenario.compliance;
                    let spec = VehicleSpec { id: VehicleId(id), class, cost: cost.clone(), compliant, free_speed };
                    vehicles.push(placed(id as usize, *row_gap_m, spec));
                    id += 1;
                }
            }
        }
        FleetConfig::Spawn { interval_s, cutoff_s, curves, classes, free_speed } => {
            let curves = curves
                .iter()
                .enumerate()
                .map(|(i, c)| c.build(range).map_err(|r| ConfigError::invalid(format!("fleet.curves[{i}]"), r)))
                .collect::<Result<Vec<_>, _>>()?;
            let mix = FleetMix {
                curves,
                classes: classes.clone(),
                free_speed: (free_speed[0], free_speed[1]),
                compliance: scenario.compliance,
            };
            pending = spawn_process(*interval_s, *cutoff_s, &mix, rng).into();
        }
        FleetConfig::Ev {
            count,
            base,
            ancillary_kw,
            passengers,
            passenger_mass_kg,
            curb_mass_kg,
            initial_speed,
            row_gap_m,
        } => {
            for i in 0..*count {
                let u: f64 = rng.gen();
                let alpha0 = ancillary_kw[0] + (ancillary_kw[1] - ancillary_kw[0]) * u;
                let people = rng.gen_range(passengers[0]..=passengers[1]);
                let mass = curb_mass_kg + passenger_mass_kg * f64::from(people);
                let curve = EvPowerCurve { alpha0, alpha1: base.alpha1 * mass / curb_mass_kg, ..*base };
                let cost = CostFunction::new(CurveShape::Ev(curve), range)
                    .map_err(|e| ConfigError::invalid("fleet.base", e.to_string()))?;
                let class = *VehicleClass::ALL.choose(rng).expect("classes");
                let free_speed = draw_initial(initial_speed, rng);
                let compliant = rng.gen::<f64>() < scenario.compliance;
                let spec = VehicleSpec { id: VehicleId(i), class, cost, compliant, free_speed };
                vehicles.push(placed(i as usize, *row_gap_m, spec));
            }
        }
    }
    Ok((vehicles, pending))
}

/// Cost curves of every vehicle the scenario will ever field, in id order.
pub fn fleet_costs(scenario: &Scenario) -> Result<Vec<CostFunction>, SimError> {
    scenario.validate()?;
    let (vehicles, pending) = build_fleet(scenario, &mut rng_stream(scenario.seed, FLEET_STREAM))?;
    Ok(vehicles.into_iter().map(|v| v.spec.cost).chain(pending.into_iter().map(|a| a.spec.cost)).collect())
}

impl Simulation {
    pub fn new(scenario: &Scenario, options: RunOptions) -> Result<Self, SimError> {
        scenario.validate()?;
        let mut fleet_rng = rng_stream(scenario.seed, FLEET_STREAM);
        let (mut vehicles, pending) = build_fleet(scenario, &mut fleet_rng)?;
        let mut coefficients: Vec<f64> = Vec::new();
        for v in &vehicles {
            coefficients.extend(v.spec.cost.shape().coefficients());
        }
        for a in &pending {
            coefficients.extend(a.spec.cost.shape().coefficients());
        }
        coefficients.sort_by(f64::total_cmp);
        coefficients.dedup();
        for v in &mut vehicles {
            v.state.section = scenario.road.section_at(v.state.position).unwrap_or(0);
        }
        Ok(Self {
            road: scenario.road.clone(),
            range: scenario.range,
            eta: scenario.consensus.eta(),
            gain: scenario.consensus.mu(),
            comm: scenario.comm,
            activation_round: scenario.activation_round(),
            epsilon: scenario.consensus.epsilon,
            hold_rounds: scenario.consensus.hold_rounds,
            connectivity_window: scenario.connectivity_window,
            options,
            vehicles,
            pending,
            graph_rng: rng_stream(scenario.seed, GRAPH_STREAM),
            station: BaseStation::new(scenario.reporting, MissingPolicy::Exclude),
            metrics: MetricsAccumulator::new(scenario.road.sections.len(), scenario.metrics_window),
            trace: Vec::new(),
            v2v: Vec::new(),
            history: Vec::new(),
            graphs: VecDeque::new(),
            flags: RunFlags::default(),
            coefficients,
            round: 0,
            name: scenario.name.clone(),
            seed: scenario.seed,
            ev: scenario.fleet.is_ev(),
        })
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn fleet_size(&self) -> usize {
        self.vehicles.len()
    }

    /// Current recommendations of the advisory group, in id order.
    pub fn recommendations(&self) -> Vec<f64> {
        self.vehicles.iter().filter_map(|v| v.recommendation).collect()
    }

    pub fn metrics(&self) -> &MetricsAccumulator {
        &self.metrics
    }

    pub fn history(&self) -> &[SpeedState] {
        &self.history
    }

    fn admit_arrivals(&mut self) {
        let now = self.round as f64 * DT;
        while self.pending.front().is_some_and(|a| a.time_s <= now) {
            let a = self.pending.pop_front().expect("front exists");
            let state = VehicleState::at(0.0, a.spec.free_speed);
            self.vehicles.push(Vehicle { spec: a.spec, state, recommendation: None });
        }
    }

    fn neighbour_graph(&mut self, members: &[usize], ids: &[VehicleId]) -> NeighborGraph {
        let n = members.len();
        let graph = match self.comm {
            CommModel::Radius { r_m } => {
                let positions: Vec<f64> =
                    members.iter().map(|&i| self.road.road_coordinate(self.vehicles[i].state.position)).collect();
                if self.road.ring {
                    radius_graph_on_ring(&positions, r_m, self.road.total_length())
                } else {
                    radius_graph(&positions, r_m)
                }
            }
            CommModel::Random { p_edge } => random_graph(n, p_edge, &mut self.graph_rng),
            CommModel::Complete => NeighborGraph::complete(n),
        };
        graph.with_nodes(ids).at_round(self.round)
    }

    fn check_connectivity(&mut self, graph: NeighborGraph) {
        self.graphs.push_back(graph);
        if self.graphs.len() > self.connectivity_window {
            self.graphs.pop_front();
        }
        if self.graphs.len() == self.connectivity_window {
            self.flags.connectivity_checks += 1;
            let window: Vec<NeighborGraph> = self.graphs.drain(..).collect();
            if !union_strongly_connected(&window) {
                self.flags.connectivity_warnings += 1;
                debug!("round {}: union of the last {} neighbour graphs is not strongly connected", self.round, window.len());
            }
        }
    }

    fn advisory_round(&mut self) -> Result<Option<f64>, SimError> {
        let round = self.round;
        let members: Vec<usize> = (0..self.vehicles.len())
            .filter(|&i| self.road.sections[self.vehicles[i].state.section].controlled)
            .collect();
        for (i, v) in self.vehicles.iter_mut().enumerate() {
            if !members.contains(&i) {
                v.recommendation = None;
            } else if v.recommendation.is_none() {
                v.recommendation = Some(self.range.clamp(v.state.speed));
            }
        }
        if members.is_empty() {
            self.graphs.clear();
            return Ok(None);
        }
        let ids: Vec<VehicleId> = members.iter().map(|&i| self.vehicles[i].spec.id).collect();
        let speeds: Vec<f64> = members.iter().map(|&i| self.vehicles[i].recommendation.expect("member")).collect();
        let state = SpeedState::new(round, ids.clone(), speeds);

        let graph = self.neighbour_graph(&members, &ids);
        let mean_degree = graph.degree_stats().mean;

        self.station.open_round(round, &ids);
        for (k, &i) in members.iter().enumerate() {
            let value = self.vehicles[i].spec.cost.derivative(state.speeds[k]).map_err(ConsensusError::from)?;
            self.station.submit(GradientReport { round, vehicle: Some(ids[k]), value })?;
        }
        let aggregate = self.station.close_round()?.broadcast.value;

        if self.options.v2v {
            let out = graph.out_degrees();
            for k in 0..members.len() {
                self.v2v.push(V2vMessage { round, sender: ids[k], recipients: out[k], speed: state.speeds[k] });
            }
        }

        let bounds: Vec<_> = members.iter().map(|&i| self.vehicles[i].spec.cost.bounds()).collect();
        let bound = mu_upper_bound(&bounds)?;
        let mu = match self.gain {
            GainSetting::Fixed(mu) => mu,
            GainSetting::Auto(_) => DEFAULT_MU_FRACTION * bound,
        };
        if mu >= bound {
            self.flags.gain_violations += 1;
        }
        let matrix = build_matrix(&graph, self.eta)?;
        let next = consensus_step(&state, &matrix, aggregate, mu, Some(self.range))?;
        for (k, &i) in members.iter().enumerate() {
            self.vehicles[i].recommendation = Some(next.speeds[k]);
        }
        self.history.push(state);
        self.check_connectivity(graph);
        Ok(Some(mean_degree))
    }

    fn forced_round(&mut self, speed: f64) {
        let speed = self.range.clamp(speed);
        for v in &mut self.vehicles {
            let controlled = self.road.sections[v.state.section].controlled;
            v.recommendation = controlled.then_some(speed);
        }
    }

    /// Runs one round.
    pub fn step(&mut self, mode: RoundMode) -> Result<(), SimError> {
        self.admit_arrivals();
        for v in &mut self.vehicles {
            if let Some(s) = self.road.section_at(v.state.position) {
                v.state.section = s;
            }
        }
        let mut mean_degree = 0.0;
        let forced = match mode {
            RoundMode::Forced(speed) => {
                self.forced_round(speed);
                true
            }
            RoundMode::Advisory if self.round >= self.activation_round => {
                mean_degree = self.advisory_round()?.unwrap_or(0.0);
                false
            }
            RoundMode::Advisory => false,
        };

        let mut accruals = Vec::with_capacity(self.vehicles.len());
        for v in &mut self.vehicles {
            let section = v.state.section;
            let target = target_speed(&v.spec, &self.road.sections[section], v.recommendation);
            if forced && v.recommendation == Some(target) {
                v.state.speed = target;
            }
            let next = kinematic_step(&v.state, target, v.spec.class.dynamics(), DT);
            let accrual = step_accrual(&v.spec.cost, section, next.speed, next.position - v.state.position);
            v.state = VehicleState { accrued: v.state.accrued + accrual.amount, ..next };
            accruals.push(accrual);
            if self.options.trace {
                self.trace.push(TraceRow {
                    round: self.round,
                    vehicle: v.spec.id,
                    section,
                    position_m: v.state.position,
                    actual_speed_kmh: v.state.speed,
                    recommended_speed_kmh: v.recommendation,
                    cost_rate: accrual.rate,
                });
            }
        }
        let spread = spread_of(&self.vehicles);
        self.metrics.accrue(self.round, &accruals, spread, mean_degree);

        let road = &self.road;
        self.vehicles.retain(|v| road.section_at(v.state.position).is_some());
        self.round += 1;
        Ok(())
    }

    pub fn finish(self) -> RunArtifact {
        if self.flags.connectivity_warnings > 0 {
            warn!(
                "{}: {} of {} neighbour-graph windows were not strongly connected",
                self.name, self.flags.connectivity_warnings, self.flags.connectivity_checks
            );
        }
        let convergence = detect_consensus(&self.history, self.epsilon, self.hold_rounds);
        let log = if self.options.keep_log { self.station.into_log() } else { MessageLog::default() };
        RunArtifact {
            scenario: self.name,
            seed: self.seed,
            section_names: self.road.sections.iter().map(|s| s.name.clone()).collect(),
            trace: self.trace,
            metrics: self.metrics,
            log,
            v2v: self.v2v,
            history: self.history,
            convergence,
            activation_round: self.activation_round,
            rounds: self.round,
            flags: self.flags,
            coefficients: self.coefficients,
            ev: self.ev,
        }
    }
}

fn spread_of(vehicles: &[Vehicle]) -> f64 {
    let (lo, hi) = vehicles
        .iter()
        .filter_map(|v| v.recommendation)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

/// Runs a scenario to completion with the advisory in every round.
pub fn run_scenario(scenario: &Scenario, options: RunOptions) -> Result<RunArtifact, SimError> {
    let mut sim = Simulation::new(scenario, options)?;
    for _ in 0..scenario.rounds() {
        sim.step(RoundMode::Advisory)?;
    }
    Ok(sim.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    fn ring(comm: &str, compliance: f64) -> Scenario {
        let text = format!(
            r#"{{
            "name": "ring", "seed": 11,
            "road": {{"sections": [{{"name": "ring", "length_m": 5000, "controlled": true}}], "ring": true}},
            "range": [30, 130],
            "fleet": {{"kind": "fixed", "groups": [{{"curve": "R007", "count": 6}}, {{"curve": "R021", "count": 2}}],
                       "initial_speed": {{"uniform": [60, 90]}}}},
            "consensus": {{"eta": "adaptive", "mu": "auto"}},
            "comm": {comm},
            "activation_s": 20, "duration_s": 200, "compliance": {compliance}
        }}"#
        );
        parse_scenario(&text).unwrap()
    }

    #[test]
    fn deterministic() {
        let s = ring(r#"{"radius": {"r_m": 100}}"#, 1.0);
        let a = run_scenario(&s, RunOptions::full()).unwrap();
        let b = run_scenario(&s, RunOptions::full()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.log.to_text(), b.log.to_text());
    }

    #[test]
    fn holds_initial_speed_before_activation() {
        let s = ring(r#""complete""#, 1.0);
        let a = run_scenario(&s, RunOptions::full()).unwrap();
        for row in a.trace.iter().filter(|r| r.round < 20) {
            assert!(row.recommended_speed_kmh.is_none());
        }
        assert_eq!(a.history.first().map(|h| h.round), Some(20));
    }

    #[test]
    fn one_report_per_member_and_one_broadcast_per_round() {
        let s = ring(r#""complete""#, 1.0);
        let a = run_scenario(&s, RunOptions::full()).unwrap();
        let rounds = (s.rounds() - s.activation_round()) as usize;
        assert_eq!(a.log.len(), rounds * (8 + 1));
        assert_eq!(a.v2v.len(), rounds * 8);
    }

    #[test]
    fn complete_graph_reaches_the_optimum() {
        let s = ring(r#""complete""#, 1.0);
        let a = run_scenario(&s, RunOptions::summary()).unwrap();
        let mut costs = vec![CostFunction::preset("R007", s.range).unwrap(); 6];
        costs.extend(vec![CostFunction::preset("R021", s.range).unwrap(); 2]);
        let y = crate::oracle::centralized_optimum(&costs, s.range, 1e-9).unwrap().y_star;
        let last = a.history.last().unwrap();
        assert!(last.speeds.iter().all(|v| (v - y).abs() < 0.01), "{:?} vs {y}", last.speeds);
        assert!(a.convergence.converged);
    }

    #[test]
    fn exogenous_graph_recommendations_ignore_compliance() {
        let a = run_scenario(&ring(r#"{"random": {"p_edge": 0.3}}"#, 0.0), RunOptions::summary()).unwrap();
        let b = run_scenario(&ring(r#"{"random": {"p_edge": 0.3}}"#, 1.0), RunOptions::summary()).unwrap();
        assert_eq!(a.history, b.history);
    }
}
