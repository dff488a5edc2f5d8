//! Distributed resource allocation for the downlink of coordinated multi-cell
//! OFDMA networks.
//!
//! The objective is the weighted sum over cells of each cell's minimum user
//! rate (WSMR). Power and subcarrier allocation are optimized alternately:
//!
//! - [`ocd`] runs the optimality-condition decomposition power allocator, where
//!   every cell takes a single primal-dual Newton step per iteration against a
//!   shared snapshot of the other cells.
//! - [`lr`] is the Lagrangian-relaxation benchmark with subgradient multiplier
//!   updates.
//! - [`subcarrier`] solves the per-cell max-min assignment exactly by
//!   branch-and-bound (or greedily).
//! - [`coordinator`] alternates the two phases and simulates the central agent
//!   that gathers and redistributes per-cell state.
//! - [`experiment`] holds the Monte-Carlo and oracle harnesses behind the CLI.

pub mod coordinator;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod lr;
pub mod ocd;
pub mod rates;
pub mod scenario;
pub mod subcarrier;
mod clock;
mod par;

pub use coordinator::{run, IterationTrace, PowerMethod, RunConfig, RunOutcome};
pub use error::{Error, Result};
pub use rates::{Assignment, PowerMatrix};
pub use scenario::{Scenario, ScenarioParams};
pub use subcarrier::SubcarrierMode;
