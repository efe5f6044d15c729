//! Optimised consensus iteration.
//!
//! Each round every vehicle mixes its recommended speed with the speeds it
//! hears from its neighbours (a row-stochastic step) and then subtracts
//! `mu` times the fleet-wide derivative sum broadcast by the base station:
//!
//! ```text
//! s_i(k+1) = s_i(k) + sum_{j in N_i} P_ij (s_j(k) - s_i(k)) - mu * F(k),
//! F(k)     = sum_j f'_j(s_j(k)).
//! ```
//!
//! On the consensus line `s = y e` this reduces to the scalar map
//! `h(y) = y - mu * sum_j f'_j(y)`, which is a contraction whenever
//! `0 < mu < 2 / sum_j d_max_j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, CostFunction, DerivativeBounds, SpeedRange};
use crate::graph::NeighborGraph;
use crate::VehicleId;

pub const DEFAULT_ETA: f64 = 0.001;
pub const DEFAULT_EPSILON_KMH: f64 = 0.1;
pub const DEFAULT_HOLD_ROUNDS: usize = 10;
/// Fraction of the gain bound used when no gain is given.
pub const DEFAULT_MU_FRACTION: f64 = 0.9;
const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsensusError {
    #[error("row {row}: neighbour weight sum {weight} exceeds 1")]
    WeightOverflow { row: usize, weight: f64 },
    #[error("empty fleet")]
    EmptyFleet,
    #[error("dimension mismatch: state has {state} entries, matrix has {matrix} rows")]
    DimensionMismatch { state: usize, matrix: usize },
    #[error("neighbour weight must be positive, got {0}")]
    InvalidEta(f64),
    #[error("feedback gain must be positive and finite, got {0}")]
    InvalidGain(f64),
    #[error("feedback gain {mu} is not below the stability bound {bound}")]
    GainAboveBound { mu: f64, bound: f64 },
    #[error("no fixed point after {iterations} iterations (last iterate {last})")]
    NonConvergence { iterations: usize, last: f64 },
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Recommended speeds of the active vehicles at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedState {
    pub round: u64,
    pub ids: Vec<VehicleId>,
    pub speeds: Vec<f64>,
}

impl SpeedState {
    pub fn new(round: u64, ids: Vec<VehicleId>, speeds: Vec<f64>) -> Self {
        assert_eq!(ids.len(), speeds.len(), "one speed per vehicle");
        Self { round, ids, speeds }
    }

    /// Every vehicle at speed `y`.
    pub fn uniform(round: u64, n: usize, y: f64) -> Self {
        Self::new(round, (0..n as u32).map(VehicleId).collect(), vec![y; n])
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// `max_i s_i - min_i s_i`, zero for an empty state.
    pub fn spread(&self) -> f64 {
        if self.speeds.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self
            .speeds
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        hi - lo
    }

    pub fn mean(&self) -> Option<f64> {
        if self.speeds.is_empty() {
            None
        } else {
            Some(self.speeds.iter().sum::<f64>() / self.speeds.len() as f64)
        }
    }

    /// Largest change of any vehicle present in both states.
    fn max_change_from(&self, prev: &SpeedState) -> f64 {
        if self.ids == prev.ids {
            return self
                .speeds
                .iter()
                .zip(&prev.speeds)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        }
        let mut change: f64 = 0.0;
        for (id, s) in self.ids.iter().zip(&self.speeds) {
            if let Some(k) = prev.ids.iter().position(|p| p == id) {
                change = change.max((s - prev.speeds[k]).abs());
            }
        }
        change
    }
}

/// How neighbour weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSetting {
    /// One weight for every link.
    Fixed(f64),
    /// `1 / (|N_i| + 1)` for every link into vehicle `i`.
    Adaptive(AdaptiveTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptiveTag {
    Adaptive,
}

impl EtaSetting {
    pub const ADAPTIVE: EtaSetting = EtaSetting::Adaptive(AdaptiveTag::Adaptive);

    fn weight(&self, degree: usize) -> f64 {
        match *self {
            EtaSetting::Fixed(eta) => eta,
            EtaSetting::Adaptive(_) => 1.0 / (degree as f64 + 1.0),
        }
    }
}

impl Default for EtaSetting {
    fn default() -> Self {
        EtaSetting::Fixed(DEFAULT_ETA)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusParams {
    pub eta: EtaSetting,
    pub mu: f64,
    /// Operator bounds used to clamp published recommendations.
    pub range: SpeedRange,
    pub epsilon: f64,
    pub hold_rounds: usize,
}

impl ConsensusParams {
    pub fn new(eta: EtaSetting, mu: f64, range: SpeedRange) -> Result<Self, ConsensusError> {
        if let EtaSetting::Fixed(e) = eta {
            if !(e > 0.0 && e.is_finite()) {
                return Err(ConsensusError::InvalidEta(e));
            }
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(ConsensusError::InvalidGain(mu));
        }
        Ok(Self {
            eta,
            mu,
            range,
            epsilon: DEFAULT_EPSILON_KMH,
            hold_rounds: DEFAULT_HOLD_ROUNDS,
        })
    }

    /// Gain set to a fixed fraction of the stability bound of `bounds`.
    pub fn with_default_gain(
        eta: EtaSetting,
        bounds: &[DerivativeBounds],
        range: SpeedRange,
    ) -> Result<Self, ConsensusError> {
        Self::new(eta, DEFAULT_MU_FRACTION * mu_upper_bound(bounds)?, range)
    }

    /// Checks `mu` against the bound of the given fleet.
    pub fn check_gain(&self, bounds: &[DerivativeBounds]) -> Result<(), ConsensusError> {
        let bound = mu_upper_bound(bounds)?;
        if self.mu < bound {
            Ok(())
        } else {
            Err(ConsensusError::GainAboveBound { mu: self.mu, bound })
        }
    }
}

/// Sparse row-stochastic matrix. Off-diagonal entries are stored per row,
/// the diagonal is `1 - row sum of off-diagonal weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    rows: Vec<Vec<(usize, f64)>>,
    diagonal: Vec<f64>,
}

impl ConsensusMatrix {
    pub fn identity(n: usize) -> Self {
        Self { rows: vec![Vec::new(); n], diagonal: vec![1.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diagonal[i];
        }
        self.rows[i]
            .iter()
            .find(|(col, _)| *col == j)
            .map_or(0.0, |(_, w)| *w)
    }

    pub fn off_diagonal(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.diagonal[i] + self.rows[i].iter().map(|(_, w)| w).sum::<f64>()
    }

    pub fn is_row_stochastic(&self) -> bool {
        (0..self.dim()).all(|i| {
            self.diagonal[i] >= 0.0
                && self.rows[i].iter().all(|(_, w)| *w >= 0.0)
                && (self.row_sum(i) - 1.0).abs() <= ROW_SUM_TOL
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| (0..self.dim()).map(|j| self.entry(i, j)).collect()).collect()
    }

    /// Plain matrix-vector product `P x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                self.diagonal[i] * x[i] + self.rows[i].iter().map(|&(j, w)| w * x[j]).sum::<f64>()
            })
            .collect()
    }

    /// Product of matrices `self * other`, dense, for ergodicity diagnostics.
    pub fn dense_product(&self, other: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|c| {
                        self.diagonal[i] * other[i][c]
                            + self.rows[i].iter().map(|&(j, w)| w * other[j][c]).sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Builds the consensus matrix: weight `eta` on every neighbour link and the
/// remainder on the diagonal.
pub fn build_matrix(graph: &NeighborGraph, eta: EtaSetting) -> Result<ConsensusMatrix, ConsensusError> {
    let n = graph.len();
    let mut rows = Vec::with_capacity(n);
    let mut diagonal = Vec::with_capacity(n);
    for i in 0..n {
        let neighbors = graph.neighbors(i);
        let w = eta.weight(neighbors.len());
        let total = w * neighbors.len() as f64;
        if total > 1.0 {
            return Err(ConsensusError::WeightOverflow { row: i, weight: total });
        }
        rows.push(neighbors.iter().map(|&j| (j, w)).collect());
        diagonal.push(1.0 - total);
    }
    Ok(ConsensusMatrix { rows, diagonal })
}

/// Largest admissible feedback gain, `2 / sum_j d_max_j`.
pub fn mu_upper_bound(bounds: &[DerivativeBounds]) -> Result<f64, ConsensusError> {
    if bounds.is_empty() {
        return Err(ConsensusError::EmptyFleet);
    }
    Ok(2.0 / bounds.iter().map(|b| b.d_max).sum::<f64>())
}

/// Sum of derivatives of `costs` at the matching `speeds`, in slice order.
pub fn gradient_sum(costs: &[&CostFunction], speeds: &[f64]) -> Result<f64, CostError> {
    let mut total = 0.0;
    for (f, &s) in costs.iter().zip(speeds) {
        total += f.derivative(s)?;
    }
    Ok(total)
}

/// One consensus round. `aggregate` is the base-station broadcast for the
/// round. Passing `clamp` bounds the published recommendations.
pub fn consensus_step(
    state: &SpeedState,
    matrix: &ConsensusMatrix,
    aggregate: f64,
    mu: f64,
    clamp: Option<SpeedRange>,
) -> Result<SpeedState, ConsensusError> {
    if state.len() != matrix.dim() {
        return Err(ConsensusError::DimensionMismatch { state: state.len(), matrix: matrix.dim() });
    }
    let s = &state.speeds;
    let feedback = mu * aggregate;
    let speeds = (0..s.len())
        .map(|i| {
            let mixing: f64 = matrix.rows[i].iter().map(|&(j, w)| w * (s[j] - s[i])).sum();
            let next = s[i] + mixing - feedback;
            clamp.map_or(next, |r| r.clamp(next))
        })
        .collect();
    Ok(SpeedState { round: state.round + 1, ids: state.ids.clone(), speeds })
}

/// The scalar map on the consensus line, `y - mu * sum_j f'_j(y)`.
pub fn lure_step(y: f64, costs: &[CostFunction], mu: f64) -> Result<f64, ConsensusError> {
    let mut total = 0.0;
    for f in costs {
        total += f.derivative(y)?;
    }
    Ok(y - mu * total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LureFixedPoint {
    pub speed: f64,
    pub iterations: usize,
}

/// Iterates [`lure_step`] until successive iterates differ by less than
/// `tol`. Leaving the common cost domain counts as divergence.
pub fn run_lure_to_fixed_point(
    costs: &[CostFunction],
    mu: f64,
    y0: f64,
    tol: f64,
    max_iterations: usize,
) -> Result<LureFixedPoint, ConsensusError> {
    if costs.is_empty() {
        return Err(ConsensusError::EmptyFleet);
    }
    let mut y = y0;
    for iteration in 1..=max_iterations {
        let next = match lure_step(y, costs, mu) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => return Err(ConsensusError::NonConvergence { iterations: iteration, last: v }),
            Err(ConsensusError::Cost(CostError::OutOfDomain { .. })) => {
                return Err(ConsensusError::NonConvergence { iterations: iteration, last: y });
            }
            Err(e) => return Err(e),
        };
        if (next - y).abs() < tol {
            return Ok(LureFixedPoint { speed: next, iterations: iteration });
        }
        y = next;
    }
    Err(ConsensusError::NonConvergence { iterations: max_iterations, last: y })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsensusDetection {
    pub converged: bool,
    /// Round at which the hold period completed.
    pub round: Option<u64>,
}

/// First round after which the spread has stayed below `epsilon` and no
/// recommendation has moved by `epsilon` or more for `hold_rounds`
/// consecutive rounds.
pub fn detect_consensus(history: &[SpeedState], epsilon: f64, hold_rounds: usize) -> ConsensusDetection {
    let not_yet = ConsensusDetection { converged: false, round: None };
    let Some(first) = history.first() else {
        return not_yet;
    };
    let mut streak = 0usize;
    if first.spread() < epsilon && hold_rounds == 0 {
        return ConsensusDetection { converged: true, round: Some(first.round) };
    }
    for pair in history.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let steady = !cur.is_empty()
            && prev.spread() < epsilon
            && cur.spread() < epsilon
            && cur.max_change_from(prev) < epsilon;
        streak = if steady { streak + 1 } else { 0 };
        if streak >= hold_rounds {
            return ConsensusDetection { converged: true, round: Some(cur.round) };
        }
    }
    not_yet
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CurveShape, QuadraticCurve};

    fn wide() -> SpeedRange {
        SpeedRange::new(-1e6, 1e6).unwrap()
    }

    fn quads(centers: &[f64]) -> Vec<CostFunction> {
        centers
            .iter()
            .map(|&c| CostFunction::new(CurveShape::Quadratic(QuadraticCurve::new(c, 1.0)), wide()).unwrap())
            .collect()
    }

    #[test]
    fn complete_three_node_matrix() {
        let p = build_matrix(&NeighborGraph::complete(3), EtaSetting::Fixed(0.25)).unwrap();
        for i in 0..3 {
            let mut row: Vec<f64> = (0..3).map(|j| p.entry(i, j)).collect();
            row.sort_by(f64::total_cmp);
            assert_eq!(row, vec![0.25, 0.25, 0.5]);
        }
        assert!(p.is_row_stochastic());
    }

    #[test]
    fn empty_graph_gives_identity() {
        let p = build_matrix(&NeighborGraph::empty(4), EtaSetting::Fixed(0.3)).unwrap();
        assert_eq!(p, ConsensusMatrix::identity(4));
    }

    #[test]
    fn weight_boundary() {
        let p = build_matrix(&NeighborGraph::complete(2), EtaSetting::Fixed(0.6)).unwrap();
        assert_eq!(p.to_dense(), vec![vec![0.4, 0.6], vec![0.6, 0.4]]);
        let err = build_matrix(&NeighborGraph::complete(3), EtaSetting::Fixed(0.6)).unwrap_err();
        assert!(matches!(err, ConsensusError::WeightOverflow { row: 0, .. }));
    }

    #[test]
    fn adaptive_weights_average_exactly_on_complete_graph() {
        let p = build_matrix(&NeighborGraph::complete(4), EtaSetting::ADAPTIVE).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(p.entry(i, j), 0.25);
            }
        }
    }

    #[test]
    fn gain_bound_examples() {
        let b = |d: f64| DerivativeBounds { d_min: d, d_max: d };
        assert_eq!(mu_upper_bound(&[b(1.0), b(1.0), b(2.0)]).unwrap(), 0.5);
        assert_eq!(mu_upper_bound(&[b(2.0)]).unwrap(), 1.0);
        let forty = vec![b(0.05); 40];
        assert!((mu_upper_bound(&forty).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mu_upper_bound(&[]), Err(ConsensusError::EmptyFleet));
    }

    #[test]
    fn identity_with_zero_aggregate_is_fixed() {
        let s = SpeedState::new(3, vec![VehicleId(0), VehicleId(1)], vec![42.0, 77.0]);
        let next = consensus_step(&s, &ConsensusMatrix::identity(2), 0.0, 0.01, None).unwrap();
        assert_eq!(next.speeds, s.speeds);
        assert_eq!(next.round, 4);
    }

    #[test]
    fn averaging_two_vehicles() {
        let s = SpeedState::new(0, vec![VehicleId(0), VehicleId(1)], vec![10.0, 30.0]);
        let p = build_matrix(&NeighborGraph::complete(2), EtaSetting::Fixed(0.5)).unwrap();
        let next = consensus_step(&s, &p, 0.0, 0.01, None).unwrap();
        assert_eq!(next.speeds, vec![20.0, 20.0]);
    }

    #[test]
    fn optimum_is_fixed_point_of_step() {
        let costs = quads(&[10.0, 20.0, 30.0]);
        let refs: Vec<&CostFunction> = costs.iter().collect();
        let s = SpeedState::uniform(0, 3, 20.0);
        let agg = gradient_sum(&refs, &s.speeds).unwrap();
        assert_eq!(agg, 0.0);
        let p = build_matrix(&NeighborGraph::complete(3), EtaSetting::Fixed(0.1)).unwrap();
        assert_eq!(consensus_step(&s, &p, agg, 0.01, None).unwrap().speeds, s.speeds);
    }

    #[test]
    fn dimension_mismatch() {
        let s = SpeedState::uniform(0, 3, 20.0);
        assert!(matches!(
            consensus_step(&s, &ConsensusMatrix::identity(2), 0.0, 0.1, None),
            Err(ConsensusError::DimensionMismatch { state: 3, matrix: 2 })
        ));
    }

    #[test]
    fn clamping_is_applied() {
        let s = SpeedState::uniform(0, 2, 50.0);
        let r = SpeedRange::new(40.0, 60.0).unwrap();
        let next = consensus_step(&s, &ConsensusMatrix::identity(2), 1000.0, 1.0, Some(r)).unwrap();
        assert_eq!(next.speeds, vec![40.0, 40.0]);
    }

    #[test]
    fn lure_step_hand_arithmetic() {
        let costs = quads(&[10.0, 20.0, 30.0]);
        let h = lure_step(25.0, &costs, 0.01).unwrap();
        assert!((h - 24.7).abs() < 1e-12);
        assert_eq!(lure_step(20.0, &costs, 0.01).unwrap(), 20.0);
    }

    #[test]
    fn single_quadratic_lure_is_affine() {
        let costs = quads(&[33.0]);
        for (mu, y) in [(0.1, 50.0), (0.3, 10.0), (0.9, 70.0)] {
            let h = lure_step(y, &costs, mu).unwrap();
            let expected = (1.0f64 - 2.0 * mu).abs() * (y - 33.0f64).abs();
            assert!(((h - 33.0).abs() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn lure_converges_to_mean_of_quadratic_minima() {
        let fp = run_lure_to_fixed_point(&quads(&[10.0, 20.0, 30.0]), 0.01, 80.0, 1e-10, 100_000).unwrap();
        assert!((fp.speed - 20.0).abs() < 1e-7);
    }

    #[test]
    fn lure_diverges_far_above_bound() {
        let stiff: Vec<CostFunction> = [10.0, 20.0]
            .iter()
            .map(|&c| {
                CostFunction::new(
                    CurveShape::Quadratic(QuadraticCurve::new(c, 5.0)),
                    SpeedRange::new(-1e4, 1e4).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let bound = mu_upper_bound(&stiff.iter().map(CostFunction::bounds).collect::<Vec<_>>()).unwrap();
        let err = run_lure_to_fixed_point(&stiff, 10.0 * bound, 16.0, 1e-9, 10_000).unwrap_err();
        assert!(matches!(err, ConsensusError::NonConvergence { .. }));
    }

    #[test]
    fn detection_on_constant_state() {
        let history: Vec<_> = (0..30).map(|k| SpeedState::uniform(k, 5, 60.0)).collect();
        let d = detect_consensus(&history, 0.1, 10);
        assert_eq!(d, ConsensusDetection { converged: true, round: Some(10) });
    }

    #[test]
    fn alternating_state_never_converges() {
        let history: Vec<_> = (0..100)
            .map(|k| {
                let y = if k % 2 == 0 { 60.0 } else { 61.0 };
                SpeedState::uniform(k, 3, y)
            })
            .collect();
        assert!(!detect_consensus(&history, 0.1, 10).converged);
    }

    #[test]
    fn spread_blocks_detection() {
        let history: Vec<_> = (0..30)
            .map(|k| SpeedState::new(k, vec![VehicleId(0), VehicleId(1)], vec![60.0, 61.0]))
            .collect();
        assert!(!detect_consensus(&history, 0.1, 10).converged);
    }

    #[test]
    fn eta_setting_json() {
        let fixed: EtaSetting = serde_json::from_str("0.001").unwrap();
        assert_eq!(fixed, EtaSetting::Fixed(0.001));
        let adaptive: EtaSetting = serde_json::from_str("\"adaptive\"").unwrap();
        assert_eq!(adaptive, EtaSetting::ADAPTIVE);
        assert_eq!(serde_json::to_string(&adaptive).unwrap(), "\"adaptive\"");
    }
}
