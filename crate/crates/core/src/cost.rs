//! Per-vehicle cost curves.
//!
//! Two families are supported: the average-speed CO2 emission model for
//! combustion vehicles (grams per km as a rational polynomial of speed) and
//! the steady-state energy model for electric vehicles (kWh per km). A plain
//! quadratic is included for analysis and testing.
//!
//! All speeds are in km/h. A [`CostFunction`] pairs a curve with the speed
//! interval it is evaluated on and checks strict convexity on that interval
//! when it is built.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{bisect_increasing, linspace, Bracket};

/// Number of interior curvature samples used by [`estimate_bounds`].
pub const CURVATURE_SAMPLES: usize = 1000;

/// Default tolerance (km/h) for [`find_min_speed`].
pub const MIN_SPEED_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("speed {speed} km/h outside domain {range}")]
    OutOfDomain { speed: f64, range: SpeedRange },
    #[error("speed range [{lo}, {hi}] is empty or not finite")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("curve requires a strictly positive speed domain, got lower bound {lo}")]
    NonPositiveDomain { lo: f64 },
    #[error("curvature {curvature} at {speed} km/h is not strictly positive")]
    ConvexityViolation { speed: f64, curvature: f64 },
    #[error("ancillary power alpha0 must be positive, got {0}")]
    NonPositiveAncillary(f64),
    #[error("unknown curve preset `{0}`")]
    UnknownPreset(String),
}

/// Closed speed interval in km/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct SpeedRange {
    lo: f64,
    hi: f64,
}

impl SpeedRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self, CostError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CostError::InvalidRange { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    /// Intersection of two ranges, if it is non-degenerate.
    pub fn intersect(&self, other: &SpeedRange) -> Option<SpeedRange> {
        SpeedRange::new(self.lo.max(other.lo), self.hi.min(other.hi)).ok()
    }
}

impl Default for SpeedRange {
    fn default() -> Self {
        Self { lo: 5.0, hi: 130.0 }
    }
}

impl fmt::Display for SpeedRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl TryFrom<[f64; 2]> for SpeedRange {
    type Error = CostError;

    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        SpeedRange::new(v[0], v[1])
    }
}

impl From<SpeedRange> for [f64; 2] {
    fn from(r: SpeedRange) -> Self {
        [r.lo, r.hi]
    }
}

fn one() -> f64 {
    1.0
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

/// Average-speed CO2 emission factor, g/km:
/// `k * (a + b v + c v^2 + d v^3 + e v^4 + f v^5 + g v^6) / v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IceEmissionCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub e: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub f: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub g: f64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub k: f64,
}

impl IceEmissionCurve {
    /// Petrol car, emission type R007.
    pub const R007: Self = Self::cubic(2.2606e3, 3.1583e1, 2.9263e-1, 3.0199e-3);
    /// Petrol car, emission type R014.
    pub const R014: Self = Self::cubic(2.5324e3, 6.8842e1, -4.3167e-1, 6.6776e-3);
    /// Petrol car, emission type R021.
    pub const R021: Self = Self::cubic(3.7473e3, 1.0571e2, -8.5270e-1, 1.0318e-2);
    /// Petrol car, emission type R040.
    pub const R040: Self = Self::cubic(1.2988e3, 2.0203e2, -1.5597, 1.2264e-2);

    /// Curve with `e = f = g = 0` and `k = 1`.
    pub const fn cubic(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d, e: 0.0, f: 0.0, g: 0.0, k: 1.0 }
    }

    pub fn eval(&self, v: f64) -> f64 {
        let poly = self.b
            + v * (self.c + v * (self.d + v * (self.e + v * (self.f + v * self.g))));
        self.k * (self.a / v + poly)
    }

    pub fn slope(&self, v: f64) -> f64 {
        let poly = self.c
            + v * (2.0 * self.d + v * (3.0 * self.e + v * (4.0 * self.f + v * 5.0 * self.g)));
        self.k * (-self.a / (v * v) + poly)
    }

    pub fn curvature(&self, v: f64) -> f64 {
        let poly = 2.0 * self.d + v * (6.0 * self.e + v * (12.0 * self.f + v * 20.0 * self.g));
        self.k * (2.0 * self.a / (v * v * v) + poly)
    }
}

/// Steady-speed EV consumption per km, kWh/km:
/// `alpha0 / v + alpha1 + alpha2 v + alpha3 v^2`.
///
/// `alpha0` is the ancillary load in kW; dividing power by speed in km/h
/// gives energy per km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvPowerCurve {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl EvPowerCurve {
    pub fn eval(&self, v: f64) -> f64 {
        self.alpha0 / v + self.alpha1 + v * (self.alpha2 + v * self.alpha3)
    }

    pub fn slope(&self, v: f64) -> f64 {
        -self.alpha0 / (v * v) + self.alpha2 + 2.0 * self.alpha3 * v
    }

    pub fn curvature(&self, v: f64) -> f64 {
        2.0 * self.alpha0 / (v * v * v) + 2.0 * self.alpha3
    }
}

/// `weight * (v - center)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCurve {
    pub center: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

impl QuadraticCurve {
    pub fn new(center: f64, weight: f64) -> Self {
        Self { center, weight }
    }

    pub fn eval(&self, v: f64) -> f64 {
        let d = v - self.center;
        self.weight * d * d
    }

    pub fn slope(&self, v: f64) -> f64 {
        2.0 * self.weight * (v - self.center)
    }

    pub fn curvature(&self, _v: f64) -> f64 {
        2.0 * self.weight
    }
}

/// Any supported cost curve, without a domain attached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveShape {
    Ice(IceEmissionCurve),
    Ev(EvPowerCurve),
    Quadratic(QuadraticCurve),
}

impl CurveShape {
    pub const PRESET_NAMES: [&'static str; 4] = ["R007", "R014", "R021", "R040"];

    /// Named emission-type presets.
    pub fn preset(name: &str) -> Result<Self, CostError> {
        let curve = match name {
            "R007" => IceEmissionCurve::R007,
            "R014" => IceEmissionCurve::R014,
            "R021" => IceEmissionCurve::R021,
            "R040" => IceEmissionCurve::R040,
            other => return Err(CostError::UnknownPreset(other.to_string())),
        };
        Ok(CurveShape::Ice(curve))
    }

    pub fn value(&self, v: f64) -> f64 {
        match self {
            CurveShape::Ice(c) => c.eval(v),
            CurveShape::Ev(c) => c.eval(v),
            CurveShape::Quadratic(c) => c.eval(v),
        }
    }

    pub fn slope(&self, v: f64) -> f64 {
        match self {
            CurveShape::Ice(c) => c.slope(v),
            CurveShape::Ev(c) => c.slope(v),
            CurveShape::Quadratic(c) => c.slope(v),
        }
    }

    pub fn curvature(&self, v: f64) -> f64 {
        match self {
            CurveShape::Ice(c) => c.curvature(v),
            CurveShape::Ev(c) => c.curvature(v),
            CurveShape::Quadratic(c) => c.curvature(v),
        }
    }

    /// Every parameter that defines the curve. Used by the privacy audit to
    /// check that no message carries them.
    pub fn coefficients(&self) -> Vec<f64> {
        match *self {
            CurveShape::Ice(c) => vec![c.a, c.b, c.c, c.d, c.e, c.f, c.g, c.k],
            CurveShape::Ev(c) => vec![c.alpha0, c.alpha1, c.alpha2, c.alpha3],
            CurveShape::Quadratic(c) => vec![c.center, c.weight],
        }
    }

    fn needs_positive_domain(&self) -> bool {
        !matches!(self, CurveShape::Quadratic(_))
    }
}

/// Bounds on the growth rate of the derivative, `d_min <= f'' <= d_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBounds {
    pub d_min: f64,
    pub d_max: f64,
}

/// Samples the analytic curvature on a uniform grid (with both endpoints)
/// and returns its extremes.
pub fn estimate_bounds(shape: &CurveShape, range: SpeedRange) -> Result<DerivativeBounds, CostError> {
    let mut d_min = f64::INFINITY;
    let mut d_max = f64::NEG_INFINITY;
    for v in linspace(range.lo(), range.hi(), CURVATURE_SAMPLES + 2) {
        let curvature = shape.curvature(v);
        if !(curvature > 0.0) {
            return Err(CostError::ConvexityViolation { speed: v, curvature });
        }
        d_min = d_min.min(curvature);
        d_max = d_max.max(curvature);
    }
    Ok(DerivativeBounds { d_min, d_max })
}

/// Location of the minimum of a convex curve on a range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Minimizer {
    /// The derivative vanishes inside the range.
    Interior(f64),
    /// The derivative has constant sign; the minimum sits on this boundary.
    Boundary(f64),
}

impl Minimizer {
    pub fn speed(&self) -> f64 {
        match *self {
            Minimizer::Interior(v) | Minimizer::Boundary(v) => v,
        }
    }

    pub fn is_interior(&self) -> bool {
        matches!(self, Minimizer::Interior(_))
    }
}

/// Bisection on the derivative of a curve that is strictly convex on `range`.
pub fn find_min_speed(shape: &CurveShape, range: SpeedRange, tol: f64) -> Minimizer {
    match bisect_increasing(|v| shape.slope(v), range.lo(), range.hi(), tol) {
        Bracket::Root(v) => Minimizer::Interior(v),
        Bracket::AtLower => Minimizer::Boundary(range.lo()),
        Bracket::AtUpper => Minimizer::Boundary(range.hi()),
    }
}

/// A strictly convex cost curve bound to its evaluation domain.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFunction {
    shape: CurveShape,
    range: SpeedRange,
    bounds: DerivativeBounds,
}

impl CostFunction {
    pub fn new(shape: CurveShape, range: SpeedRange) -> Result<Self, CostError> {
        if shape.needs_positive_domain() && range.lo() <= 0.0 {
            return Err(CostError::NonPositiveDomain { lo: range.lo() });
        }
        if let CurveShape::Ev(ev) = shape {
            if !(ev.alpha0 > 0.0) {
                return Err(CostError::NonPositiveAncillary(ev.alpha0));
            }
        }
        let bounds = estimate_bounds(&shape, range)?;
        Ok(Self { shape, range, bounds })
    }

    pub fn preset(name: &str, range: SpeedRange) -> Result<Self, CostError> {
        Self::new(CurveShape::preset(name)?, range)
    }

    pub fn shape(&self) -> &CurveShape {
        &self.shape
    }

    pub fn range(&self) -> SpeedRange {
        self.range
    }

    pub fn bounds(&self) -> DerivativeBounds {
        self.bounds
    }

    fn check(&self, v: f64) -> Result<(), CostError> {
        if self.range.contains(v) {
            Ok(())
        } else {
            Err(CostError::OutOfDomain { speed: v, range: self.range })
        }
    }

    /// Cost rate at speed `v` (g/km or kWh/km).
    pub fn eval(&self, v: f64) -> Result<f64, CostError> {
        self.check(v)?;
        Ok(self.shape.value(v))
    }

    /// Analytic first derivative at `v`.
    pub fn derivative(&self, v: f64) -> Result<f64, CostError> {
        self.check(v)?;
        Ok(self.shape.slope(v))
    }

    pub fn second_derivative(&self, v: f64) -> Result<f64, CostError> {
        self.check(v)?;
        Ok(self.shape.curvature(v))
    }

    pub fn min_speed(&self) -> Minimizer {
        find_min_speed(&self.shape, self.range, MIN_SPEED_TOL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(lo: f64, hi: f64) -> SpeedRange {
        SpeedRange::new(lo, hi).unwrap()
    }

    fn quad(center: f64) -> CurveShape {
        CurveShape::Quadratic(QuadraticCurve::new(center, 1.0))
    }

    const EV_UNIT: EvPowerCurve = EvPowerCurve { alpha0: 0.5, alpha1: 0.0, alpha2: 0.0, alpha3: 0.25 };

    #[test]
    fn r007_at_ten_kmh() {
        // 2260.6/10 + 31.583 + 0.29263*10 + 0.0030199*100
        let expected = 226.06 + 31.583 + 2.9263 + 0.30199;
        let f = CostFunction::preset("R007", range(5.0, 130.0)).unwrap();
        assert!((f.eval(10.0).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 260.87).abs() < 5e-3);
    }

    #[test]
    fn ev_two_term_substitution() {
        let f = CostFunction::new(CurveShape::Ev(EV_UNIT), range(0.1, 10.0)).unwrap();
        assert!((f.eval(1.0).unwrap() - 0.75).abs() < 1e-15);
        assert!(f.derivative(1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_scale_is_identically_zero() {
        let mut c = IceEmissionCurve::R014;
        c.k = 0.0;
        for v in [5.0, 40.0, 77.7, 130.0] {
            assert_eq!(c.eval(v), 0.0);
        }
        // and it is rejected as a cost function since it is not strictly convex
        assert!(matches!(
            CostFunction::new(CurveShape::Ice(c), range(5.0, 130.0)),
            Err(CostError::ConvexityViolation { .. })
        ));
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let f = CostFunction::preset("R007", range(5.0, 130.0)).unwrap();
        assert!(matches!(f.eval(4.0), Err(CostError::OutOfDomain { .. })));
        assert!(matches!(f.derivative(131.0), Err(CostError::OutOfDomain { .. })));
        assert!(f.eval(5.0).is_ok() && f.eval(130.0).is_ok());
    }

    #[test]
    fn ice_needs_positive_domain() {
        assert!(matches!(
            CostFunction::preset("R007", range(0.0, 130.0)),
            Err(CostError::NonPositiveDomain { .. })
        ));
    }

    #[test]
    fn derivative_zero_at_r007_minimum() {
        let f = CostFunction::preset("R007", range(40.0, 80.0)).unwrap();
        assert!(f.derivative(59.0).unwrap().abs() < 5e-3);
    }

    #[test]
    fn quadratic_vertex_and_bounds() {
        let f = CostFunction::new(quad(20.0), range(0.1, 100.0)).unwrap();
        assert_eq!(f.derivative(20.0).unwrap(), 0.0);
        assert_eq!(f.bounds(), DerivativeBounds { d_min: 2.0, d_max: 2.0 });
        assert!((f.min_speed().speed() - 20.0).abs() < 1e-8);
    }

    #[test]
    fn r021_is_convex_on_highway_range() {
        let b = estimate_bounds(&CurveShape::preset("R021").unwrap(), range(40.0, 100.0)).unwrap();
        assert!(b.d_min > 0.0 && b.d_min <= b.d_max);
        // f'' = 2a/v^3 + 2d is decreasing, so the extremes sit on the endpoints
        let c = IceEmissionCurve::R021;
        assert!((b.d_max - c.curvature(40.0)).abs() < 1e-15);
        assert!((b.d_min - c.curvature(100.0)).abs() < 1e-15);
    }

    #[test]
    fn concave_term_is_rejected() {
        let c = IceEmissionCurve::cubic(0.0, 0.0, -10.0, 0.0);
        assert!(matches!(
            estimate_bounds(&CurveShape::Ice(c), range(5.0, 130.0)),
            Err(CostError::ConvexityViolation { .. })
        ));
    }

    #[test]
    fn r007_minimum_near_59() {
        let f = CostFunction::preset("R007", range(40.0, 80.0)).unwrap();
        let m = f.min_speed();
        assert!(m.is_interior());
        assert!((m.speed() - 59.0).abs() < 0.05, "{m:?}");
    }

    #[test]
    fn ev_minimum_cube_root() {
        let f = CostFunction::new(CurveShape::Ev(EV_UNIT), range(0.1, 10.0)).unwrap();
        assert!((f.min_speed().speed() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn monotone_curve_minimum_on_boundary() {
        let f = CostFunction::new(quad(-5.0), range(1.0, 10.0)).unwrap();
        assert_eq!(f.min_speed(), Minimizer::Boundary(1.0));
        let g = CostFunction::new(quad(50.0), range(1.0, 10.0)).unwrap();
        assert_eq!(g.min_speed(), Minimizer::Boundary(10.0));
    }

    #[test]
    fn ev_requires_positive_ancillary() {
        let ev = EvPowerCurve { alpha0: 0.0, ..EV_UNIT };
        assert!(matches!(
            CostFunction::new(CurveShape::Ev(ev), range(5.0, 130.0)),
            Err(CostError::NonPositiveAncillary(_))
        ));
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(CurveShape::preset("R999"), Err(CostError::UnknownPreset(_))));
    }

    #[test]
    fn shape_json_is_externally_tagged() {
        let s: CurveShape = serde_json::from_str(r#"{"ice":{"a":1.0,"b":2.0,"c":3.0,"d":4.0}}"#).unwrap();
        assert_eq!(s, CurveShape::Ice(IceEmissionCurve::cubic(1.0, 2.0, 3.0, 4.0)));
        let r: Result<SpeedRange, _> = serde_json::from_str("[10.0, 5.0]");
        assert!(r.is_err());
    }
}
