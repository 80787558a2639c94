use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::Addr64;
use super::coordinator::Reading;
use crate::cloud::Notification;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub addr64: Addr64,
    pub charge_remaining_mah: f64,
    pub supply_volts: f64,
    pub low_voltage_latched: bool,
    pub depleted: bool,
    pub frames_sent: u64,
    pub readings: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub t: f64,
    pub feed_id: String,
    pub value: String,
    pub entry_id: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub events_processed: u64,
    pub readings_produced: u64,
    pub poll_requests: u64,
    pub poll_timeouts: u64,
    pub skipped_poll_cycles: u64,
    pub frames_dropped: u64,
    pub corruptions_injected: u64,
    pub corrupted_frames: u64,
    pub rejected_frames: u64,
    pub posts_attempted: u64,
    pub posts_succeeded: u64,
    pub posts_failed: u64,
    /// Readings that never reached the cloud: failed posts plus buffers dropped on reset.
    pub lost_readings: u64,
    pub resets: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub until_s: f64,
    #[serde(flatten)]
    pub counters: Counters,
    pub nodes: Vec<NodeReport>,
    pub readings: Vec<Reading>,
    pub posts: Vec<PostRecord>,
    pub notifications: Vec<Notification>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty() && self.posts.is_empty() && self.notifications.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub kind: String,
    pub node: Option<Addr64>,
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "kind", "node"])?;
    for r in trace {
        w.write_record([
            format!("{:.6}", r.time),
            r.kind.clone(),
            r.node.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
