//! Car-following simulation engine and experiment harness.
//!
//! The crate covers four layers:
//!
//! - [`carfollow`]: the Gipps, IIDM, and Helly acceleration laws plus the
//!   CAH/CACC cooperative composite, as pure functions;
//! - [`microsim`]: a single-lane corridor engine with signals realized as
//!   virtual blocking vehicles and stop-bar detectors;
//! - [`macrosim`]: the density/speed translation of the same laws on a link
//!   grid;
//! - [`experiments`] and [`platoon`]: intersection-throughput experiments
//!   (acceleration sweep, ACC/CACC penetration ensembles) and platoon
//!   lifecycle management.
//!
//! Everything is deterministic given a scenario seed; the only randomness is
//! the placement of tech vehicles in the initial queue.

// Scenario presets are built by assigning onto a default config; the
// struct-update form cannot express the conditional fields.
#![allow(clippy::field_reassign_with_default)]

pub mod carfollow;
pub mod experiments;
pub mod macrosim;
pub mod microsim;
pub mod params;
pub mod platoon;
pub mod scenario;

pub use carfollow::{LawError, LeaderView};
pub use params::{CarFollowModel, DriverParams, VehicleClass, VehicleState};
pub use scenario::{parse_scenario, ScenarioConfig};
