use serde::{Deserialize, Serialize};

use super::road::Section;
use crate::cost::CostFunction;
use crate::VehicleId;

const KMH_PER_MS: f64 = 3.6;

/// Longitudinal dynamics of a vehicle class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    /// m/s^2
    pub accel: f64,
    /// m/s^2
    pub decel: f64,
    /// m
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Type1,
    Type2,
    Type3,
    Type4,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 4] =
        [VehicleClass::Type1, VehicleClass::Type2, VehicleClass::Type3, VehicleClass::Type4];

    pub fn dynamics(self) -> Dynamics {
        let (accel, decel, length) = match self {
            VehicleClass::Type1 => (2.15, 5.5, 4.54),
            VehicleClass::Type2 => (1.22, 5.0, 4.51),
            VehicleClass::Type3 => (1.75, 6.1, 4.45),
            VehicleClass::Type4 => (2.45, 6.1, 4.48),
        };
        Dynamics { accel, decel, length }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSpec {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub cost: CostFunction,
    pub compliant: bool,
    /// Speed held when the vehicle is not following an advisory, km/h.
    pub free_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Distance travelled since entering the road, m.
    pub position: f64,
    /// km/h
    pub speed: f64,
    pub section: usize,
    /// Accumulated cost (g or kWh).
    pub accrued: f64,
}

impl VehicleState {
    pub fn at(position: f64, speed: f64) -> Self {
        Self { position, speed, section: 0, accrued: 0.0 }
    }
}

/// Moves the speed toward `target` within the class acceleration limits and
/// advances the position by the mean of old and new speed.
pub fn kinematic_step(state: &VehicleState, target: f64, dynamics: Dynamics, dt: f64) -> VehicleState {
    let up = dynamics.accel * dt * KMH_PER_MS;
    let down = dynamics.decel * dt * KMH_PER_MS;
    let speed = if target > state.speed {
        (state.speed + up).min(target)
    } else {
        (state.speed - down).max(target)
    }
    .max(0.0);
    let position = state.position + 0.5 * (state.speed + speed) / KMH_PER_MS * dt;
    VehicleState { position, speed, ..*state }
}

/// Speed a vehicle tries to hold this round.
pub fn target_speed(vehicle: &VehicleSpec, section: &Section, recommendation: Option<f64>) -> f64 {
    match recommendation {
        Some(r) if section.controlled && vehicle.compliant => r,
        _ => vehicle.free_speed,
    }
}
