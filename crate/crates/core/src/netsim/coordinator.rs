//! Base-station (Coordinator) state machine: sequential polling, unit
//! conversion, buffering, periodic upload, and self-reset.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::device::{node_step, EndDeviceState, NodeContext, NodeEvent, SUPPLY_CHANNEL, TEMPERATURE_CHANNEL};
use super::SimTime;
use crate::frame_codec::{
    build_poll_request_with, decode_frame, parse_io_sample_with, ApiFrame, EscapeMode, FrameError, FrameIdCounter,
    FrameTypes, IoSample, PollRequest,
};
use crate::units::{adc_to_millivolts, adc_to_supply_volts, millivolts_to_celsius, AdcReading};

pub const TEMPERATURE_FEED: &str = "indoor-temperature";
pub const VOLTAGE_FEED: &str = "node-voltage";

/// Cloud feed id for one node's series.
pub fn feed_id(feed: &str, node: u64) -> String {
    format!("{feed}-{node:016X}")
}

/// Value as uploaded: two decimals.
pub fn format_value(value: f64) -> String {
    format!("{value:.2}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub node: u64,
    pub feed: String,
    /// °C or V, full precision.
    pub value: f64,
    /// Raw ADC count the value was converted from.
    pub raw: u16,
    /// Virtual seconds.
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connection {
    Connected,
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutstandingPoll {
    pub roster_index: usize,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollCycle {
    pub next_index: usize,
    pub outstanding: Option<OutstandingPoll>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostIntent {
    pub feed_id: String,
    pub value: String,
    pub reading: Reading,
}

/// Why a received frame produced no readings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    /// Failed framing or checksum.
    Corrupt(FrameError),
    /// Valid frame that is not a well-formed I/O sample.
    Malformed(FrameError),
    UnknownNode(u64),
    /// From a node we are not currently waiting on.
    Unsolicited(u64),
}

#[derive(Debug, Clone)]
pub struct CoordinatorState {
    pub node_roster: Vec<u64>,
    pub buffer: VecDeque<Reading>,
    pub update_period: f64,
    pub connection: Connection,
    pub consecutive_failures: u32,
    pub failure_reset_threshold: u32,
    pub cycle: Option<PollCycle>,
    /// Bumped on every reset so timers scheduled before it can be recognized as stale.
    pub timer_generation: u64,
    pub autonomous: bool,
    pub escape: EscapeMode,
    pub frame_types: FrameTypes,
    frame_ids: FrameIdCounter,
    next_seq: u64,
}

impl CoordinatorState {
    pub fn new(node_roster: Vec<u64>, update_period: f64, failure_reset_threshold: u32) -> Self {
        Self {
            node_roster,
            buffer: VecDeque::new(),
            update_period,
            connection: Connection::Connected,
            consecutive_failures: 0,
            failure_reset_threshold,
            cycle: None,
            timer_generation: 0,
            autonomous: false,
            escape: EscapeMode::default(),
            frame_types: FrameTypes::default(),
            frame_ids: FrameIdCounter::default(),
            next_seq: 0,
        }
    }

    pub fn is_connected(&self) -> bool {
        self.connection == Connection::Connected
    }

    pub fn outstanding(&self) -> Option<OutstandingPoll> {
        self.cycle.as_ref().and_then(|c| c.outstanding)
    }

    /// Starts a poll cycle. False if disconnected or a cycle is still running.
    pub fn begin_poll_cycle(&mut self) -> bool {
        if !self.is_connected() || self.cycle.is_some() {
            return false;
        }
        self.cycle = Some(PollCycle {
            next_index: 0,
            outstanding: None,
        });
        true
    }

    /// Issues the next poll of the running cycle. `None` while a poll is
    /// still outstanding, or when the roster is exhausted (which ends the cycle).
    pub fn next_poll(&mut self) -> Option<(OutstandingPoll, u64, ApiFrame)> {
        let cycle = self.cycle.as_mut()?;
        if cycle.outstanding.is_some() {
            return None;
        }
        if cycle.next_index >= self.node_roster.len() {
            self.cycle = None;
            return None;
        }
        let roster_index = cycle.next_index;
        cycle.next_index += 1;
        let addr = self.node_roster[roster_index];
        let frame_id = self.frame_ids.next_id();
        let frame = build_poll_request_with(&PollRequest::new(addr, frame_id), self.frame_types);
        self.next_seq += 1;
        let outstanding = OutstandingPoll {
            roster_index,
            seq: self.next_seq,
        };
        cycle.outstanding = Some(outstanding);
        Some((outstanding, addr, frame))
    }

    /// Clears the outstanding poll if `seq` is still the one pending.
    pub fn poll_timed_out(&mut self, seq: u64) -> bool {
        match self.cycle.as_mut() {
            Some(c) if c.outstanding.is_some_and(|o| o.seq == seq) => {
                c.outstanding = None;
                true
            }
            _ => false,
        }
    }

    pub fn decode_sample(&self, wire: &[u8]) -> Result<IoSample, Rejection> {
        let frame = decode_frame(wire, self.escape).map_err(Rejection::Corrupt)?;
        parse_io_sample_with(frame.frame_data(), self.frame_types).map_err(Rejection::Malformed)
    }

    /// Decodes a frame from the radio, converts it and buffers the readings.
    pub fn accept_frame(&mut self, wire: &[u8], now: SimTime) -> Result<Vec<Reading>, Rejection> {
        let sample = self.decode_sample(wire)?;
        let node = sample.source_addr64;
        let index = self
            .node_roster
            .iter()
            .position(|a| *a == node)
            .ok_or(Rejection::UnknownNode(node))?;
        if !self.autonomous {
            match self.cycle.as_mut() {
                Some(c) if c.outstanding.is_some_and(|o| o.roster_index == index) => c.outstanding = None,
                _ => return Err(Rejection::Unsolicited(node)),
            }
        }
        let readings = readings_from_sample(&sample, now);
        self.buffer.extend(readings.iter().cloned());
        Ok(readings)
    }

    /// Drains the buffer into one post per reading.
    pub fn timer_expiry(&mut self, _now: SimTime) -> Vec<PostIntent> {
        self.buffer
            .drain(..)
            .map(|r| PostIntent {
                feed_id: feed_id(&r.feed, r.node),
                value: format_value(r.value),
                reading: r,
            })
            .collect()
    }

    /// Books a post outcome. Returns true when the failure streak calls for a reset.
    pub fn record_post(&mut self, ok: bool) -> bool {
        if ok {
            self.consecutive_failures = 0;
            false
        } else {
            self.consecutive_failures += 1;
            self.consecutive_failures >= self.failure_reset_threshold
        }
    }

    /// Drops buffered data and the running cycle, disconnects, and restarts
    /// the timer. Reconnecting is up to the caller.
    pub fn reset(mut self) -> CoordinatorState {
        self.buffer.clear();
        self.cycle = None;
        self.connection = Connection::Disconnected;
        self.consecutive_failures = 0;
        self.timer_generation += 1;
        self
    }
}

/// Converts an I/O sample to engineering units: AD0 through the LM35 scale,
/// AD1 back through the supply divider.
pub fn readings_from_sample(sample: &IoSample, now: SimTime) -> Vec<Reading> {
    let t = now.as_secs();
    let mut out = Vec::with_capacity(2);
    if let Some(raw) = sample
        .channel(TEMPERATURE_CHANNEL)
        .and_then(|r| AdcReading::new(r).ok())
    {
        let celsius = millivolts_to_celsius(adc_to_millivolts(raw)).expect("ADC millivolts are non-negative");
        out.push(Reading {
            node: sample.source_addr64,
            feed: TEMPERATURE_FEED.into(),
            value: celsius,
            raw: raw.raw(),
            t,
        });
    }
    if let Some(raw) = sample.channel(SUPPLY_CHANNEL).and_then(|r| AdcReading::new(r).ok()) {
        out.push(Reading {
            node: sample.source_addr64,
            feed: VOLTAGE_FEED.into(),
            value: adc_to_supply_volts(raw),
            raw: raw.raw(),
            t,
        });
    }
    out
}

/// Runs one complete poll cycle synchronously against in-memory devices,
/// without link delay: a node that is awake answers at once, a sleeping or
/// silent node counts as a timeout (its poll stays queued for its next wake).
pub fn poll_cycle(
    coord: &mut CoordinatorState,
    devices: &mut [EndDeviceState],
    now: SimTime,
    ctx: &NodeContext,
) -> Vec<Reading> {
    let mut readings = Vec::new();
    if !coord.begin_poll_cycle() {
        return readings;
    }
    while let Some((poll, addr, frame)) = coord.next_poll() {
        let Some(dev) = devices.iter_mut().find(|d| d.addr64 == addr) else {
            coord.poll_timed_out(poll.seq);
            continue;
        };
        let (next, reply) = node_step(dev.clone(), NodeEvent::PollArrived(frame), now, ctx);
        *dev = next;
        match reply {
            Some(frame) => {
                let wire = crate::frame_codec::encode_frame(&frame, coord.escape);
                match coord.accept_frame(&wire, now) {
                    Ok(r) => readings.extend(r),
                    Err(_) => {
                        coord.poll_timed_out(poll.seq);
                    }
                }
            }
            None => {
                coord.poll_timed_out(poll.seq);
            }
        }
    }
    readings
}
