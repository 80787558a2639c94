//! Discrete-event simulation of the sensing layer: End Devices on cyclic
//! sleep, a Coordinator polling them one at a time, and periodic upload to a
//! [`CloudSink`](crate::cloud::client::CloudSink).
//!
//! Virtual time is integer microseconds. Events at the same instant run in
//! the order they were scheduled, and every random draw comes from one
//! seeded ChaCha8 stream, so a scenario and a seed fully determine a run.

pub mod config;
pub mod coordinator;
pub mod device;
mod environment;
mod kernel;
pub mod report;

use std::ops::Add;

use serde::{Deserialize, Serialize};

pub use config::{Addr64, ConfigError, Scenario};
pub use environment::temperature_at;
pub use kernel::{run, run_local, run_with_progress, Progress, SimError, Simulation, SIM_KEY};
pub use report::{write_trace_csv, Counters, NodeReport, PostRecord, SimReport, TraceRecord};

/// Virtual time in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    /// Rounds to the nearest microsecond; negative input clamps to zero.
    pub fn from_secs(secs: f64) -> Self {
        SimTime((secs.max(0.0) * 1e6).round() as u64)
    }

    pub fn from_millis(ms: f64) -> Self {
        SimTime((ms.max(0.0) * 1e3).round() as u64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_millis(self) -> u64 {
        self.0 / 1000
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}
