//! Scheduling and training core for wireless federated learning.
//!
//! Devices run a device-specific number of local SGD steps per round with
//! their learning rate scaled by `τ̄/τᵢ`. The base station picks which
//! devices participate and splits a shared FDMA uplink between them so that
//! every selected upload finishes at the same time.
//!
//! Module map:
//! - [`system`]: device, channel and latency model
//! - [`lambert`]: real Lambert-W on both branches
//! - [`allocation`]: min-max latency bandwidth allocation
//! - [`schedule`]: greedy, LP and baseline device selection
//! - [`simplex`]: dense two-phase simplex used by the LP scheduler
//! - [`fl`]: tasks, partitioning, local SGD, aggregation and the training loop
//! - [`diagnostics`]: convergence bound quantities and constant estimation

// NaN must fail range checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod diagnostics;
pub mod error;
pub mod fl;
pub mod lambert;
pub mod rng;
pub mod schedule;
pub mod simplex;
pub mod system;

pub use allocation::{device_bandwidth_for_deadline, feasibility_check, min_max_latency_allocation, AllocationResult};
pub use error::{Error, Result};
pub use schedule::{Policy, ScheduleDecision};
pub use system::{DeviceId, DeviceProfile, PopulationSpec, RoundContext, SystemConfig};
