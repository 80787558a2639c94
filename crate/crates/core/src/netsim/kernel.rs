use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::mpsc::Sender;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::{Addr64, ConfigError, EnvironmentConfig, SampleMode, Scenario};
use super::coordinator::{feed_id, CoordinatorState, Reading, Rejection, VOLTAGE_FEED};
use super::device::{node_step, EndDeviceState, NodeContext, NodeEvent};
use super::environment::temperature_at;
use super::report::{Counters, NodeReport, PostRecord, SimReport, TraceRecord};
use super::SimTime;
use crate::cloud::client::{CloudSink, LocalCloud};
use crate::cloud::{CloudConfig, CloudError, FeedService, Millis, RuleSpec};
use crate::frame_codec::{decode_frame, encode_frame, encode_with_checksum, ApiFrame, EscapeMode, FrameTypes};
use crate::power::{BatteryState, PowerMode};

/// Key the in-process cloud is provisioned with for simulation runs.
pub const SIM_KEY: &str = "sim-key";

const PROGRESS_EVERY: u64 = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cloud setup failed: {0}")]
    Cloud(#[from] CloudError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub now_s: f64,
    pub until_s: f64,
    pub events_processed: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum EventKind {
    NodeWake(usize),
    NodeSleep(usize),
    Poll,
    DeliverToNode { node: usize, wire: Vec<u8> },
    DeliverToCoordinator { node: usize, wire: Vec<u8> },
    PollTimeout { seq: u64 },
    TimerExpiry { generation: u64 },
    Reconnect,
    SupplyChange { node: usize, volts: Option<f64> },
    NodeReset(usize),
}

#[derive(Debug)]
struct Scheduled {
    at: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // BinaryHeap is a max-heap; reverse so the earliest (at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

pub struct Simulation<C: CloudSink> {
    scenario: Scenario,
    cloud: C,
    now: SimTime,
    queue: BinaryHeap<Scheduled>,
    next_seq: u64,
    devices: Vec<EndDeviceState>,
    environments: Vec<EnvironmentConfig>,
    coord: CoordinatorState,
    rng: ChaCha8Rng,
    counters: Counters,
    reconnect_pending: bool,
    readings: Vec<Reading>,
    posts: Vec<PostRecord>,
    trace: Vec<TraceRecord>,
    progress: Option<Sender<Progress>>,
}

impl<C: CloudSink> Simulation<C> {
    /// Validates the scenario, provisions feeds and alert rules on `cloud`
    /// and schedules the initial events.
    pub fn new(scenario: Scenario, mut cloud: C) -> Result<Self, SimError> {
        scenario.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let profile = scenario.power;

        let mut devices = Vec::with_capacity(scenario.nodes.len());
        let mut environments = Vec::with_capacity(scenario.nodes.len());
        let mut phases = Vec::with_capacity(scenario.nodes.len());
        for node in &scenario.nodes {
            let battery = match node.battery_mah {
                Some(mah) => BatteryState::with_charge(mah),
                None => BatteryState::full(&profile),
            };
            devices.push(EndDeviceState::new(
                node.addr64.0,
                node.addr16.unwrap_or(0xFFFE),
                battery,
                node.sleep_period,
                node.awake_window,
            ));
            environments.push(node.environment.clone().unwrap_or_else(|| scenario.environment.clone()));
            let phase = match node.wake_phase_s {
                Some(p) => p,
                None => rng.random_range(0.0..node.sleep_period),
            };
            phases.push(phase);
        }

        let roster = scenario.nodes.iter().map(|n| n.addr64.0).collect();
        let mut coord = CoordinatorState::new(
            roster,
            scenario.coordinator.update_period_s,
            scenario.coordinator.failure_reset_threshold,
        );
        coord.autonomous = scenario.coordinator.mode == SampleMode::Autonomous;
        coord.escape = EscapeMode::from_flag(scenario.link.escaped);

        for node in &scenario.nodes {
            for feed in [super::coordinator::TEMPERATURE_FEED, VOLTAGE_FEED] {
                cloud.ensure_feed(&feed_id(feed, node.addr64.0))?;
            }
            if scenario.alerts.enabled {
                cloud.add_rule(RuleSpec::new(
                    &feed_id(VOLTAGE_FEED, node.addr64.0),
                    scenario.alerts.comparison,
                    scenario.alerts.threshold,
                    &scenario.alerts.target,
                ))?;
            }
        }

        let mut sim = Simulation {
            cloud,
            now: SimTime::ZERO,
            queue: BinaryHeap::new(),
            next_seq: 0,
            devices,
            environments,
            coord,
            rng,
            counters: Counters::default(),
            reconnect_pending: false,
            readings: Vec::new(),
            posts: Vec::new(),
            trace: Vec::new(),
            progress: None,
            scenario,
        };

        for (i, phase) in phases.into_iter().enumerate() {
            sim.schedule(SimTime::from_secs(phase), EventKind::NodeWake(i));
        }
        let period = sim.update_period();
        if !sim.coord.autonomous {
            sim.schedule(
                SimTime::from_secs(sim.scenario.coordinator.poll_offset_s),
                EventKind::Poll,
            );
        }
        sim.schedule(period, EventKind::TimerExpiry { generation: 0 });

        let faults = sim.scenario.faults.clone();
        for f in &faults.supply {
            let node = sim.node_index(f.node);
            sim.schedule(
                SimTime::from_secs(f.at_s),
                EventKind::SupplyChange { node, volts: f.volts },
            );
        }
        for r in &faults.node_resets {
            let node = sim.node_index(r.node);
            sim.schedule(SimTime::from_secs(r.at_s), EventKind::NodeReset(node));
        }
        if !sim.reachable(SimTime::ZERO) {
            sim.coord.connection = super::coordinator::Connection::Disconnected;
            sim.try_reconnect();
        }
        Ok(sim)
    }

    pub fn with_progress(mut self, tx: Sender<Progress>) -> Self {
        self.progress = Some(tx);
        self
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn cloud(&self) -> &C {
        &self.cloud
    }

    pub fn devices(&self) -> &[EndDeviceState] {
        &self.devices
    }

    pub fn coordinator(&self) -> &CoordinatorState {
        &self.coord
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    /// Processes every event scheduled at or before `until`. A zero-length
    /// run processes nothing, including events due at t = 0.
    pub fn run_until(&mut self, until: SimTime) {
        if until == SimTime::ZERO {
            return;
        }
        while self.queue.peek().is_some_and(|e| e.at <= until) {
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.at;
            self.handle(ev.kind);
            self.counters.events_processed += 1;
            if self.counters.events_processed.is_multiple_of(PROGRESS_EVERY) {
                self.send_progress(until);
            }
        }
        self.now = self.now.max(until);
        self.send_progress(until);
    }

    /// Snapshot of the run so far. Battery figures include sleep drain up to
    /// the current time.
    pub fn report(&mut self) -> SimReport {
        let notifications = self.cloud.notifications().unwrap_or_default();
        let nodes = self
            .devices
            .iter()
            .map(|dev| {
                let mut battery = dev.battery;
                if !battery.is_depleted() && dev.awake_until.is_none() {
                    let slept = self.now.saturating_sub(dev.sleeping_since).as_secs();
                    battery =
                        crate::power::drain(battery, &self.scenario.power, PowerMode::Sleep, slept).unwrap_or(battery);
                }
                let ctx = self.context(0, 0.0);
                let settled = EndDeviceState { battery, ..dev.clone() };
                NodeReport {
                    addr64: Addr64(dev.addr64),
                    charge_remaining_mah: battery.charge_remaining,
                    supply_volts: settled.supply_volts(&ctx),
                    low_voltage_latched: dev.low_voltage_latched,
                    depleted: battery.is_depleted(),
                    frames_sent: dev.frames_sent,
                    readings: self.readings.iter().filter(|r| r.node == dev.addr64).count() as u64,
                }
            })
            .collect();
        SimReport {
            seed: self.scenario.seed,
            until_s: self.now.as_secs(),
            counters: self.counters.clone(),
            nodes,
            readings: self.readings.clone(),
            posts: self.posts.clone(),
            notifications,
        }
    }

    pub fn into_cloud(self) -> C {
        self.cloud
    }

    fn send_progress(&self, until: SimTime) {
        if let Some(tx) = &self.progress {
            let _ = tx.send(Progress {
                now_s: self.now.as_secs(),
                until_s: until.as_secs(),
                events_processed: self.counters.events_processed,
            });
        }
    }

    fn schedule(&mut self, at: SimTime, kind: EventKind) {
        self.next_seq += 1;
        self.queue.push(Scheduled {
            at,
            seq: self.next_seq,
            kind,
        });
    }

    fn record(&mut self, kind: &str, node: Option<usize>) {
        self.trace.push(TraceRecord {
            time: self.now.as_secs(),
            kind: kind.to_string(),
            node: node.map(|i| Addr64(self.devices[i].addr64)),
        });
    }

    fn node_index(&self, addr: Addr64) -> usize {
        self.devices
            .iter()
            .position(|d| d.addr64 == addr.0)
            .expect("validated fault targets a roster node")
    }

    fn update_period(&self) -> SimTime {
        SimTime::from_secs(self.scenario.coordinator.update_period_s)
    }

    fn reachable(&self, t: SimTime) -> bool {
        let s = t.as_secs();
        !self.scenario.faults.outages.iter().any(|o| o.from_s <= s && s < o.to_s)
    }

    fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.rng.random::<f64>() < p
    }

    fn link_delay(&self, node: usize) -> SimTime {
        SimTime::from_millis(self.scenario.link.latency_ms * self.scenario.nodes[node].hop_multiplier)
    }

    fn context(&self, node: usize, t_s: f64) -> NodeContext<'_> {
        let ambient = self.environments.get(node).map_or(25.0, |env| temperature_at(env, t_s));
        NodeContext {
            profile: &self.scenario.power,
            discharge: &self.scenario.discharge,
            t_onoff: self.scenario.radio.t_onoff_s,
            frame_overhead_bytes: self.scenario.radio.frame_overhead_bytes,
            bitrate: self.scenario.radio.bitrate,
            divider_r1: self.scenario.sensors.divider_r1,
            divider_r2: self.scenario.sensors.divider_r2,
            latch_threshold_v: self.scenario.sensors.latch_threshold_v,
            ambient_celsius: ambient,
            jitter: (0, 0),
            frame_types: FrameTypes::default(),
            autonomous: self.coord.autonomous,
        }
    }

    fn step_node(&mut self, i: usize, event: NodeEvent) -> Option<ApiFrame> {
        let j = self.scenario.sensors.adc_jitter_lsb as i32;
        let jitter = if j > 0 {
            (self.rng.random_range(-j..=j), self.rng.random_range(-j..=j))
        } else {
            (0, 0)
        };
        let ctx = NodeContext {
            jitter,
            ..self.context(i, self.now.as_secs())
        };
        let (next, frame) = node_step(self.devices[i].clone(), event, self.now, &ctx);
        self.devices[i] = next;
        frame
    }

    fn handle(&mut self, kind: EventKind) {
        match kind {
            EventKind::NodeWake(i) => self.on_wake(i),
            EventKind::NodeSleep(i) => {
                self.record("node_sleep", Some(i));
                self.step_node(i, NodeEvent::Sleep);
            }
            EventKind::Poll => self.on_poll(),
            EventKind::DeliverToNode { node, wire } => {
                self.record("frame_to_node", Some(node));
                if let Ok(frame) = decode_frame(&wire, self.coord.escape) {
                    if let Some(reply) = self.step_node(node, NodeEvent::PollArrived(frame)) {
                        self.transmit_from_node(node, reply);
                    }
                }
            }
            EventKind::DeliverToCoordinator { node, wire } => self.on_frame(node, &wire),
            EventKind::PollTimeout { seq } => {
                let pending = self.coord.outstanding().filter(|o| o.seq == seq);
                if let Some(o) = pending {
                    self.coord.poll_timed_out(seq);
                    self.counters.poll_timeouts += 1;
                    self.record("poll_timeout", Some(o.roster_index));
                    self.send_next_poll();
                }
            }
            EventKind::TimerExpiry { generation } => self.on_timer(generation),
            EventKind::Reconnect => {
                self.reconnect_pending = false;
                if !self.coord.is_connected() {
                    self.try_reconnect();
                }
            }
            EventKind::SupplyChange { node, volts } => {
                self.record("supply_change", Some(node));
                self.step_node(node, NodeEvent::ForceSupply(volts));
            }
            EventKind::NodeReset(node) => {
                self.record("node_reset", Some(node));
                self.step_node(node, NodeEvent::ClearLatch);
            }
        }
    }

    fn on_wake(&mut self, i: usize) {
        if self.devices[i].battery.is_depleted() {
            return;
        }
        self.record("node_wake", Some(i));
        let frame = self.step_node(i, NodeEvent::Wake);
        let dev = &self.devices[i];
        if dev.battery.is_depleted() {
            self.record("node_depleted", Some(i));
            return;
        }
        let (awake, period) = (
            SimTime::from_secs(dev.awake_window),
            SimTime::from_secs(dev.sleep_period),
        );
        self.schedule(self.now + awake, EventKind::NodeSleep(i));
        self.schedule(self.now + period, EventKind::NodeWake(i));
        if let Some(frame) = frame {
            self.transmit_from_node(i, frame);
        }
    }

    fn on_poll(&mut self) {
        self.schedule(self.now + self.update_period(), EventKind::Poll);
        if self.coord.begin_poll_cycle() {
            self.record("poll_cycle", None);
            self.send_next_poll();
        } else {
            self.counters.skipped_poll_cycles += 1;
            self.record("poll_cycle_skipped", None);
        }
    }

    fn send_next_poll(&mut self) {
        let Some((outstanding, _, frame)) = self.coord.next_poll() else {
            return;
        };
        let node = outstanding.roster_index;
        self.counters.poll_requests += 1;
        self.record("poll", Some(node));
        let timeout = SimTime::from_millis(self.scenario.coordinator.poll_timeout_ms as f64);
        self.schedule(self.now + timeout, EventKind::PollTimeout { seq: outstanding.seq });
        if self.chance(self.scenario.link.drop_prob) {
            self.counters.frames_dropped += 1;
            return;
        }
        let wire = encode_frame(&frame, self.coord.escape);
        self.schedule(
            self.now + self.link_delay(node),
            EventKind::DeliverToNode { node, wire },
        );
    }

    fn transmit_from_node(&mut self, node: usize, frame: ApiFrame) {
        self.record("frame_from_node", Some(node));
        if self.chance(self.scenario.link.drop_prob) {
            self.counters.frames_dropped += 1;
            return;
        }
        let wire = if self.chance(self.scenario.link.corrupt_prob) {
            self.counters.corruptions_injected += 1;
            let mut data = frame.frame_data().to_vec();
            let at = self.rng.random_range(0..data.len());
            data[at] ^= self.rng.random_range(1..=255u8);
            // original checksum over altered bytes: the receiver must catch it
            encode_with_checksum(&data, frame.checksum(), self.coord.escape)
        } else {
            encode_frame(&frame, self.coord.escape)
        };
        self.schedule(
            self.now + self.link_delay(node),
            EventKind::DeliverToCoordinator { node, wire },
        );
    }

    fn on_frame(&mut self, node: usize, wire: &[u8]) {
        match self.coord.accept_frame(wire, self.now) {
            Ok(readings) => {
                self.record("response", Some(node));
                self.counters.readings_produced += readings.len() as u64;
                self.readings.extend(readings);
                if !self.coord.autonomous {
                    self.send_next_poll();
                }
            }
            Err(Rejection::Corrupt(_)) => {
                self.counters.corrupted_frames += 1;
                self.record("frame_corrupt", Some(node));
            }
            Err(_) => {
                self.counters.rejected_frames += 1;
                self.record("frame_rejected", Some(node));
            }
        }
    }

    fn on_timer(&mut self, generation: u64) {
        if generation != self.coord.timer_generation {
            return;
        }
        self.record("timer_expiry", None);
        self.schedule(self.now + self.update_period(), EventKind::TimerExpiry { generation });
        if !self.coord.is_connected() {
            self.try_reconnect();
            if !self.coord.is_connected() {
                return;
            }
        }
        let intents = self.coord.timer_expiry(self.now);
        let total = intents.len();
        for (k, intent) in intents.into_iter().enumerate() {
            self.counters.posts_attempted += 1;
            let result = if self.reachable(self.now) {
                self.cloud
                    .post(&intent.feed_id, &intent.value, Millis(self.now.as_millis()))
            } else {
                Err(CloudError::Unavailable("uplink outage".into()))
            };
            let ok = result.is_ok();
            let node = self.devices.iter().position(|d| d.addr64 == intent.reading.node);
            let (entry_id, error) = match result {
                Ok(entry) => {
                    self.counters.posts_succeeded += 1;
                    self.record("post_complete", node);
                    (Some(entry.entry_id), None)
                }
                Err(e) => {
                    self.counters.posts_failed += 1;
                    self.counters.lost_readings += 1;
                    self.record("post_failed", node);
                    (None, Some(e.to_string()))
                }
            };
            self.posts.push(PostRecord {
                t: self.now.as_secs(),
                feed_id: intent.feed_id,
                value: intent.value,
                entry_id,
                error,
            });
            if self.coord.record_post(ok) {
                let dropped = (total - k - 1) + self.coord.buffer.len();
                self.counters.lost_readings += dropped as u64;
                self.reset_coordinator();
                return;
            }
        }
    }

    fn reset_coordinator(&mut self) {
        self.counters.resets += 1;
        self.record("reset", None);
        self.coord = self.coord.clone().reset();
        let generation = self.coord.timer_generation;
        self.schedule(self.now + self.update_period(), EventKind::TimerExpiry { generation });
        self.try_reconnect();
    }

    fn try_reconnect(&mut self) {
        if self.reachable(self.now) {
            self.coord.connection = super::coordinator::Connection::Connected;
            self.record("reconnect", None);
        } else if !self.reconnect_pending {
            self.reconnect_pending = true;
            let delay = SimTime::from_secs(self.scenario.coordinator.reconnect_delay_s);
            self.schedule(self.now + delay, EventKind::Reconnect);
        }
    }
}

fn local_service(scenario: &Scenario) -> Arc<FeedService> {
    let service = FeedService::shared(CloudConfig {
        latency: scenario.alerts.latency,
        seed: scenario.seed,
    });
    service.register_key(SIM_KEY, "simulator");
    service
}

/// Runs `scenario` for `until_s` virtual seconds against a fresh in-process
/// feed service and returns the report together with that service.
pub fn run_local(scenario: &Scenario, until_s: f64) -> Result<(SimReport, Arc<FeedService>), SimError> {
    let service = local_service(scenario);
    let mut sim = Simulation::new(scenario.clone(), LocalCloud::new(service.clone(), SIM_KEY))?;
    sim.run_until(SimTime::from_secs(until_s));
    Ok((sim.report(), service))
}

pub fn run(scenario: &Scenario, until_s: f64) -> Result<SimReport, SimError> {
    run_local(scenario, until_s).map(|(report, _)| report)
}

/// Like [`run`], streaming [`Progress`] updates to `tx` while it goes.
pub fn run_with_progress(scenario: &Scenario, until_s: f64, tx: Sender<Progress>) -> Result<SimReport, SimError> {
    let service = local_service(scenario);
    let mut sim = Simulation::new(scenario.clone(), LocalCloud::new(service, SIM_KEY))?.with_progress(tx);
    sim.run_until(SimTime::from_secs(until_s));
    Ok(sim.report())
}
