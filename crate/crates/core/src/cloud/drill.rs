//! End-to-end alert latency drill: pull one node's supply down to the alert
//! threshold, let the reading travel through the Coordinator into the feed
//! service, and time how long the resulting notification takes to arrive.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use super::LatencyDistribution;
use crate::netsim::config::{Addr64, EnvironmentConfig, Scenario, SupplyFault};
use crate::netsim::coordinator::{feed_id, VOLTAGE_FEED};
use crate::netsim::{run_local, SimError};

#[derive(Debug, Error)]
pub enum DrillError {
    #[error("at least one trial is required")]
    NoTrials,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("trial {attempt}: expected exactly one notification, got {count}")]
    AlertCount { attempt: u32, count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrillConfig {
    pub latency: LatencyDistribution,
    /// Trial `i` runs with seed `seed + i`.
    pub seed: u64,
    pub update_period_s: f64,
    pub force_at_s: f64,
    pub forced_volts: f64,
}

impl Default for DrillConfig {
    fn default() -> Self {
        Self {
            latency: LatencyDistribution::Uniform { low: 8.0, high: 13.0 },
            seed: 1,
            update_period_s: 60.0,
            force_at_s: 90.0,
            forced_volts: 2.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrillTrial {
    pub attempt: u32,
    /// Notification delay: delivery minus arrival of the triggering entry.
    pub latency_s: f64,
    pub forced_at_s: f64,
    pub created_at_s: f64,
    pub delivered_at_s: f64,
    /// Supply change to delivery, including polling and upload.
    pub end_to_end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrillResult {
    pub trials: Vec<DrillTrial>,
    pub mean_latency_s: f64,
}

fn drill_scenario(config: &DrillConfig, seed: u64) -> Scenario {
    let mut scenario = Scenario::bundled_three_nodes();
    scenario.seed = seed;
    scenario.nodes.truncate(1);
    scenario.coordinator.update_period_s = config.update_period_s;
    scenario.environment = EnvironmentConfig::Constant { celsius: 25.0 };
    scenario.alerts.latency = config.latency;
    let node = scenario.nodes[0].addr64;
    scenario.faults.supply = vec![SupplyFault {
        node,
        at_s: config.force_at_s,
        volts: Some(config.forced_volts),
    }];
    scenario
}

/// Runs `trials` independent drills. Each must raise exactly one notification.
pub fn measure_alert_latency(trials: u32, config: &DrillConfig) -> Result<DrillResult, DrillError> {
    if trials == 0 {
        return Err(DrillError::NoTrials);
    }
    let mut out = Vec::with_capacity(trials as usize);
    for attempt in 1..=trials {
        let scenario = drill_scenario(config, config.seed.wrapping_add(attempt as u64 - 1));
        let Addr64(node) = scenario.nodes[0].addr64;
        // the forced reading is polled within one period and uploaded at the next timer
        let until = config.force_at_s + 3.0 * config.update_period_s;
        let (report, _) = run_local(&scenario, until)?;
        let feed = feed_id(VOLTAGE_FEED, node);
        let fired: Vec<_> = report.notifications.iter().filter(|n| n.feed_id == feed).collect();
        if fired.len() != 1 {
            return Err(DrillError::AlertCount {
                attempt,
                count: fired.len(),
            });
        }
        let n = fired[0];
        out.push(DrillTrial {
            attempt,
            latency_s: n.latency().as_secs_f64(),
            forced_at_s: config.force_at_s,
            created_at_s: n.created_at.as_secs_f64(),
            delivered_at_s: n.delivered_at.as_secs_f64(),
            end_to_end_s: n.delivered_at.as_secs_f64() - config.force_at_s,
        });
    }
    let mean_latency_s = out.iter().map(|t| t.latency_s).sum::<f64>() / out.len() as f64;
    Ok(DrillResult {
        trials: out,
        mean_latency_s,
    })
}

pub fn write_drill_csv<W: Write>(result: &DrillResult, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in &result.trials {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_latency_is_exact() {
        let config = DrillConfig {
            latency: LatencyDistribution::Constant(11.0),
            ..DrillConfig::default()
        };
        let r = measure_alert_latency(3, &config).unwrap();
        assert_eq!(r.trials.len(), 3);
        assert_eq!(r.mean_latency_s, 11.0);
        for t in &r.trials {
            assert!(t.created_at_s >= t.forced_at_s);
            assert_eq!(t.delivered_at_s - t.created_at_s, 11.0);
        }
    }

    #[test]
    fn zero_trials_is_an_error() {
        assert!(matches!(
            measure_alert_latency(0, &DrillConfig::default()),
            Err(DrillError::NoTrials)
        ));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let r = measure_alert_latency(2, &DrillConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_drill_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("attempt,latency_s,forced_at_s,created_at_s,delivered_at_s,end_to_end_s")
        );
        assert_eq!(lines.count(), 2);
    }
}
