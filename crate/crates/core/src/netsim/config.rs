//! Scenario files (TOML).

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::cloud::{Comparison, LatencyDistribution};
use crate::power::{DischargeCurve, PowerProfile};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("config error at {path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// 64-bit radio address, written as 16 hex digits in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Addr64(pub u64);

impl fmt::Display for Addr64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016X}", self.0)
    }
}

impl Serialize for Addr64 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Addr64 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(v) => Ok(Addr64(v)),
            Raw::Text(s) => {
                let digits = s.trim_start_matches("0x").trim_start_matches("0X");
                u64::from_str_radix(digits, 16)
                    .map(Addr64)
                    .map_err(|_| serde::de::Error::custom(format!("{s:?} is not a 64-bit hex address")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub addr64: Addr64,
    #[serde(default)]
    pub addr16: Option<u16>,
    /// Cyclic sleep period, seconds between wakes.
    #[serde(default = "defaults::sleep_period")]
    pub sleep_period: f64,
    #[serde(default = "defaults::awake_window")]
    pub awake_window: f64,
    /// Initial charge; defaults to the profile capacity.
    #[serde(default, rename = "battery_mAh")]
    pub battery_mah: Option<f64>,
    /// Delay multiplier standing in for multi-hop mesh routes.
    #[serde(default = "defaults::one")]
    pub hop_multiplier: f64,
    /// Offset of the first wake; drawn from the seed when absent.
    #[serde(default)]
    pub wake_phase_s: Option<f64>,
    #[serde(default)]
    pub environment: Option<EnvironmentConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Coordinator requests each node in turn.
    #[default]
    Polling,
    /// Nodes sample and send on every wake without being asked.
    Autonomous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoordinatorConfig {
    pub update_period_s: f64,
    pub poll_timeout_ms: u64,
    pub failure_reset_threshold: u32,
    pub mode: SampleMode,
    /// Phase of the poll cycle within each update period.
    pub poll_offset_s: f64,
    pub reconnect_delay_s: f64,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            update_period_s: 1800.0,
            poll_timeout_ms: 30_000,
            failure_reset_threshold: 3,
            mode: SampleMode::Polling,
            poll_offset_s: 0.0,
            reconnect_delay_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub latency_ms: f64,
    pub drop_prob: f64,
    /// Probability that a node's frame arrives with one payload byte flipped.
    pub corrupt_prob: f64,
    pub escaped: bool,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            latency_ms: 5.0,
            drop_prob: 0.0,
            corrupt_prob: 0.0,
            escaped: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    Constant {
        celsius: f64,
    },
    Sinusoid {
        mean: f64,
        amplitude: f64,
        period_s: f64,
        #[serde(default)]
        phase_s: f64,
    },
    /// CSV of `time,celsius`, linearly interpolated and held at the ends.
    Trace {
        path: PathBuf,
        #[serde(skip)]
        samples: Vec<(f64, f64)>,
    },
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig::Constant { celsius: 25.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioTiming {
    pub t_onoff_s: f64,
    pub frame_overhead_bytes: u32,
    pub bitrate: f64,
}

impl Default for RadioTiming {
    fn default() -> Self {
        Self {
            t_onoff_s: 0.010,
            frame_overhead_bytes: 26,
            bitrate: 250_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub divider_r1: f64,
    pub divider_r2: f64,
    /// Supply below this latches the node into permanent sleep.
    pub latch_threshold_v: f64,
    /// Uniform ±N LSB noise added to each analog sample.
    pub adc_jitter_lsb: u16,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            divider_r1: 200.0,
            divider_r2: 100.0,
            latch_threshold_v: 2.1,
            adc_jitter_lsb: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlertConfig {
    pub enabled: bool,
    pub comparison: Comparison,
    pub threshold: f64,
    pub target: String,
    pub latency: LatencyDistribution,
}

impl Default for AlertConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            comparison: Comparison::Le,
            threshold: 2.1,
            target: "email".into(),
            latency: LatencyDistribution::Uniform { low: 8.0, high: 13.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplyFault {
    pub node: Addr64,
    pub at_s: f64,
    /// Forced supply voltage; absent releases the node back to its battery curve.
    #[serde(default)]
    pub volts: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub from_s: f64,
    pub to_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeReset {
    pub node: Addr64,
    pub at_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Faults {
    pub supply: Vec<SupplyFault>,
    /// Windows during which the uplink cannot reach the cloud.
    pub outages: Vec<Outage>,
    /// Clears a node's low-voltage latch.
    pub node_resets: Vec<NodeReset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub coordinator: CoordinatorConfig,
    #[serde(default)]
    pub link: LinkConfig,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub power: PowerProfile,
    #[serde(default)]
    pub radio: RadioTiming,
    #[serde(default)]
    pub discharge: DischargeCurve,
    #[serde(default)]
    pub sensors: SensorConfig,
    #[serde(default)]
    pub alerts: AlertConfig,
    #[serde(default)]
    pub faults: Faults,
}

mod defaults {
    pub fn sleep_period() -> f64 {
        20.0
    }

    pub fn awake_window() -> f64 {
        0.1
    }

    pub fn one() -> f64 {
        1.0
    }
}

pub const BUNDLED_THREE_NODES: &str = include_str!("../../scenarios/three_nodes.toml");

impl Scenario {
    /// Parses and validates. Relative trace paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::new("<file>", e.message().to_string()))?;
        let mut scenario: Scenario = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(
                if path == "." { "<root>".into() } else { path },
                e.into_inner().to_string(),
            )
        })?;
        scenario.load_traces(base_dir)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn bundled_three_nodes() -> Self {
        Self::from_toml_str(BUNDLED_THREE_NODES, None).expect("bundled scenario is valid")
    }

    fn load_traces(&mut self, base_dir: Option<&Path>) -> Result<(), ConfigError> {
        load_trace(&mut self.environment, "environment", base_dir)?;
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if let Some(env) = node.environment.as_mut() {
                load_trace(env, &format!("nodes[{i}].environment"), base_dir)?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |path: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::new(path, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |path: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ConfigError::new(path, format!("must be non-negative, got {v}")))
            }
        };
        let probability = |path: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::new(path, format!("must be within [0, 1], got {v}")))
            }
        };

        if self.nodes.is_empty() {
            return Err(ConfigError::new("nodes", "at least one node is required"));
        }
        self.power
            .validate()
            .map_err(|e| ConfigError::new("power", e.to_string()))?;
        let mut seen = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let p = |field: &str| format!("nodes[{i}].{field}");
            if !seen.insert(n.addr64) {
                return Err(ConfigError::new(p("addr64"), format!("duplicate address {}", n.addr64)));
            }
            positive(&p("sleep_period"), n.sleep_period)?;
            positive(&p("awake_window"), n.awake_window)?;
            if n.awake_window + self.radio.t_onoff_s >= n.sleep_period {
                return Err(ConfigError::new(
                    p("awake_window"),
                    "wake transition plus awake window must be shorter than sleep_period",
                ));
            }
            positive(&p("hop_multiplier"), n.hop_multiplier)?;
            if let Some(mah) = n.battery_mah {
                if !(0.0..=self.power.capacity).contains(&mah) {
                    return Err(ConfigError::new(
                        p("battery_mAh"),
                        format!("must be within [0, {}], got {mah}", self.power.capacity),
                    ));
                }
            }
            if let Some(phase) = n.wake_phase_s {
                non_negative(&p("wake_phase_s"), phase)?;
            }
            if let Some(env) = &n.environment {
                validate_environment(env, &p("environment"))?;
            }
        }
        validate_environment(&self.environment, "environment")?;

        let c = &self.coordinator;
        positive("coordinator.update_period_s", c.update_period_s)?;
        if c.poll_timeout_ms == 0 {
            return Err(ConfigError::new("coordinator.poll_timeout_ms", "must be positive"));
        }
        if c.failure_reset_threshold == 0 {
            return Err(ConfigError::new(
                "coordinator.failure_reset_threshold",
                "must be positive",
            ));
        }
        non_negative("coordinator.poll_offset_s", c.poll_offset_s)?;
        positive("coordinator.reconnect_delay_s", c.reconnect_delay_s)?;

        non_negative("link.latency_ms", self.link.latency_ms)?;
        probability("link.drop_prob", self.link.drop_prob)?;
        probability("link.corrupt_prob", self.link.corrupt_prob)?;

        non_negative("radio.t_onoff_s", self.radio.t_onoff_s)?;
        positive("radio.bitrate", self.radio.bitrate)?;
        positive("sensors.divider_r1", self.sensors.divider_r1)?;
        positive("sensors.divider_r2", self.sensors.divider_r2)?;
        non_negative("sensors.latch_threshold_v", self.sensors.latch_threshold_v)?;
        if !(self.discharge.full_volts > self.discharge.empty_volts && self.discharge.empty_volts >= 0.0) {
            return Err(ConfigError::new("discharge", "full_volts must exceed empty_volts >= 0"));
        }
        if !self.alerts.threshold.is_finite() {
            return Err(ConfigError::new("alerts.threshold", "must be finite"));
        }

        for (i, f) in self.faults.supply.iter().enumerate() {
            self.check_node(f.node, &format!("faults.supply[{i}].node"))?;
            non_negative(&format!("faults.supply[{i}].at_s"), f.at_s)?;
            if let Some(v) = f.volts {
                non_negative(&format!("faults.supply[{i}].volts"), v)?;
            }
        }
        for (i, o) in self.faults.outages.iter().enumerate() {
            non_negative(&format!("faults.outages[{i}].from_s"), o.from_s)?;
            if o.to_s.is_nan() || o.to_s < o.from_s {
                return Err(ConfigError::new(
                    format!("faults.outages[{i}].to_s"),
                    "must not precede from_s",
                ));
            }
        }
        for (i, r) in self.faults.node_resets.iter().enumerate() {
            self.check_node(r.node, &format!("faults.node_resets[{i}].node"))?;
            non_negative(&format!("faults.node_resets[{i}].at_s"), r.at_s)?;
        }
        Ok(())
    }

    fn check_node(&self, addr: Addr64, path: &str) -> Result<(), ConfigError> {
        if self.nodes.iter().any(|n| n.addr64 == addr) {
            Ok(())
        } else {
            Err(ConfigError::new(path, format!("unknown node {addr}")))
        }
    }
}

fn validate_environment(env: &EnvironmentConfig, path: &str) -> Result<(), ConfigError> {
    match env {
        EnvironmentConfig::Constant { celsius } if !celsius.is_finite() => {
            Err(ConfigError::new(format!("{path}.celsius"), "must be finite"))
        }
        EnvironmentConfig::Sinusoid { period_s, .. } if !(period_s.is_finite() && *period_s > 0.0) => {
            Err(ConfigError::new(format!("{path}.period_s"), "must be positive"))
        }
        EnvironmentConfig::Sinusoid {
            mean,
            amplitude,
            phase_s,
            ..
        } if !(mean.is_finite() && amplitude.is_finite() && phase_s.is_finite()) => {
            Err(ConfigError::new(path, "sinusoid parameters must be finite"))
        }
        EnvironmentConfig::Trace { samples, .. } if samples.is_empty() => {
            Err(ConfigError::new(format!("{path}.path"), "trace has no samples"))
        }
        _ => Ok(()),
    }
}

fn load_trace(env: &mut EnvironmentConfig, path: &str, base_dir: Option<&Path>) -> Result<(), ConfigError> {
    let EnvironmentConfig::Trace { path: file, samples } = env else {
        return Ok(());
    };
    let resolved = match base_dir {
        Some(dir) if file.is_relative() => dir.join(&*file),
        _ => file.clone(),
    };
    let err = |m: String| ConfigError::new(format!("{path}.path"), m);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(&resolved)
        .map_err(|e| err(format!("cannot read {}: {e}", resolved.display())))?;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 2 {
            return Err(err(format!("row {} must have 2 columns", line + 1)));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(t), Ok(c)) if t.is_finite() && c.is_finite() => {
                if out.last().is_some_and(|(prev, _)| t <= *prev) {
                    return Err(err(format!("row {} time {t} is not increasing", line + 1)));
                }
                out.push((t, c));
            }
            // header row
            _ if line == 0 => continue,
            _ => return Err(err(format!("row {} is not numeric", line + 1))),
        }
    }
    *samples = out;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenario_parses() {
        let s = Scenario::bundled_three_nodes();
        assert_eq!(s.nodes.len(), 3);
        assert_eq!(s.coordinator.update_period_s, 1800.0);
        assert_eq!(s.nodes[0].addr64, Addr64(0x0013_A200_409C_2679));
    }

    #[test]
    fn error_paths_name_the_field() {
        let e = Scenario::from_toml_str("nodes = []", None).unwrap_err();
        assert_eq!(e.path, "nodes");

        let e = Scenario::from_toml_str("[[nodes]]\naddr64 = \"01\"\nsleep_period = -1\n", None).unwrap_err();
        assert_eq!(e.path, "nodes[0].sleep_period");

        let e = Scenario::from_toml_str(
            "[[nodes]]\naddr64 = \"01\"\n[coordinator]\nupdate_period_s = \"soon\"\n",
            None,
        )
        .unwrap_err();
        assert_eq!(e.path, "coordinator.update_period_s");

        let e = Scenario::from_toml_str("[[nodes]]\naddr64 = \"zz\"\n", None).unwrap_err();
        assert_eq!(e.path, "nodes[0].addr64");

        let e = Scenario::from_toml_str("[[nodes]]\naddr64 = 1\ncolour = 3\n", None).unwrap_err();
        assert!(e.path.starts_with("nodes[0]"), "{e}");

        let e = Scenario::from_toml_str(
            "[[nodes]]\naddr64 = 1\n[[faults.supply]]\nnode = 2\nat_s = 0\nvolts = 2.1\n",
            None,
        )
        .unwrap_err();
        assert_eq!(e.path, "faults.supply[0].node");
    }

    #[test]
    fn trace_environment_loads_relative_to_scenario() {
        let dir = std::env::temp_dir().join(format!("wsn-trace-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("temps.csv"), "time,celsius\n0,20\n100,30\n").unwrap();
        let text = "[[nodes]]\naddr64 = 1\n[environment]\nmodel = \"trace\"\npath = \"temps.csv\"\n";
        let s = Scenario::from_toml_str(text, Some(&dir)).unwrap();
        match &s.environment {
            EnvironmentConfig::Trace { samples, .. } => assert_eq!(samples, &vec![(0.0, 20.0), (100.0, 30.0)]),
            other => panic!("{other:?}"),
        }
        std::fs::write(dir.join("bad.csv"), "0,20\n0,30\n").unwrap();
        let text = text.replace("temps.csv", "bad.csv");
        assert_eq!(
            Scenario::from_toml_str(&text, Some(&dir)).unwrap_err().path,
            "environment.path"
        );
    }
}
