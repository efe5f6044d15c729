//! Point-mass highway simulator the advisory loop runs in.
//!
//! Vehicles do not interact: each one tracks a target speed within its
//! class acceleration limits and accrues cost from its own speed. The
//! round clock is 1 s for both kinematics and the consensus update.

pub mod metrics;
pub mod road;
pub mod sim;
pub mod spawn;
pub mod vehicle;

pub use metrics::{step_accrual, Accrual, MetricsAccumulator, RoundMetrics};
pub use road::{RoadLayout, Section};
pub use sim::*;
pub use spawn::{spawn_process, Arrival, FleetMix};
pub use vehicle::{kinematic_step, target_speed, Dynamics, VehicleClass, VehicleSpec, VehicleState};
