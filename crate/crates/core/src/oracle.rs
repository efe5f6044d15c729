//! Centralised ground truth for the common optimal speed.
//!
//! The fleet optimum solves `sum_j f'_j(y) = 0`. It is found here by
//! bisection on the summed derivative, with a brute-force grid scan of the
//! summed cost as an independent cross-check.

use crate::cost::{CostError, CostFunction, SpeedRange};
use crate::numeric::{bisect_increasing, linspace, Bracket};

/// Default bracket tolerance in km/h.
pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimumReport {
    pub y_star: f64,
    pub gradient_residual: f64,
    pub total_cost_at_opt: f64,
    /// Set when the summed derivative has constant sign on the range.
    pub on_boundary: bool,
}

/// Speed range shared by every cost in the fleet, intersected with `range`.
pub fn common_range(costs: &[CostFunction], range: SpeedRange) -> Option<SpeedRange> {
    costs.iter().try_fold(range, |r, f| r.intersect(&f.range()))
}

fn sum_slope(costs: &[CostFunction], v: f64) -> f64 {
    costs.iter().map(|f| f.shape().slope(v)).sum()
}

fn sum_cost(costs: &[CostFunction], v: f64) -> f64 {
    costs.iter().map(|f| f.shape().value(v)).sum()
}

/// Solves for the fleet optimum on `range` to within `tol` km/h.
pub fn centralized_optimum(
    costs: &[CostFunction],
    range: SpeedRange,
    tol: f64,
) -> Result<OptimumReport, CostError> {
    let domain = common_range(costs, range).ok_or(CostError::InvalidRange { lo: range.lo(), hi: range.hi() })?;
    // every CostFunction was checked for strict convexity on its own range at
    // construction, so the summed derivative is increasing on `domain`
    let (y_star, on_boundary) =
        match bisect_increasing(|v| sum_slope(costs, v), domain.lo(), domain.hi(), tol) {
            Bracket::Root(y) => (y, false),
            Bracket::AtLower | Bracket::AtUpper => {
                let (lo, hi) = (domain.lo(), domain.hi());
                let y = if sum_cost(costs, lo) <= sum_cost(costs, hi) { lo } else { hi };
                (y, true)
            }
        };
    Ok(OptimumReport {
        y_star,
        gradient_residual: sum_slope(costs, y_star).abs(),
        total_cost_at_opt: sum_cost(costs, y_star),
        on_boundary,
    })
}

/// Argmin of the summed cost over `points` uniform samples of `range`.
pub fn grid_scan_optimum(costs: &[CostFunction], range: SpeedRange, points: usize) -> f64 {
    let points = points.max(2);
    let mut best = (f64::INFINITY, range.lo());
    for v in linspace(range.lo(), range.hi(), points) {
        let total = sum_cost(costs, v);
        if total < best.0 {
            best = (total, v);
        }
    }
    best.1
}

/// Spacing of the grid used by [`grid_scan_optimum`].
pub fn grid_step(range: SpeedRange, points: usize) -> f64 {
    range.width() / (points.max(2) - 1) as f64
}
