//! Consensus-based speed advisory.
//!
//! A fleet of vehicles agrees on one recommended speed that
//! minimises the sum of their private convex cost curves (CO2 g/km
//! for combustion vehicles, kWh/km for EVs). Each vehicle only ever
//! reveals a scalar derivative value to a base station, which
//! broadcasts the fleet sum back; neighbours exchange recommended
//! speeds over V2V.
//!
//! The crate holds the cost models, the consensus iteration, a
//! centralised oracle for verification, communication graphs, the
//! base-station aggregator with a privacy audit, a point-mass traffic
//! simulator, and the scenario/experiment harness used by the CLI.

// `!(x > 0.0)` is the NaN-rejecting form used by the validators.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod base_station;
pub mod consensus;
pub mod cost;
pub mod graph;
pub mod harness;
pub mod mobility;
mod numeric;
pub mod oracle;
pub mod scenario;

/// Vehicle identifier, stable for the lifetime of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
