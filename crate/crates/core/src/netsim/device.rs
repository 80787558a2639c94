//! End Device state machine.

use serde::Serialize;

use super::SimTime;
use crate::frame_codec::{
    parse_poll_request_with, serialize_io_sample_with, ApiFrame, FrameTypes, IoSample, PollRequest,
};
use crate::power::{drain, transmit_time, BatteryState, DischargeCurve, DutyCycleSpec, PowerMode, PowerProfile};
use crate::units::{
    celsius_to_adc, divider_output, pin_volts_to_adc, AdcReading, DividerConfig, ADC_MAX, CELSIUS_FULL_SCALE,
};

pub const TEMPERATURE_CHANNEL: u8 = 0;
pub const SUPPLY_CHANNEL: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SensorSet {
    pub temperature: bool,
    pub supply_voltage: bool,
}

impl Default for SensorSet {
    fn default() -> Self {
        Self {
            temperature: true,
            supply_voltage: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndDeviceState {
    pub addr64: u64,
    pub addr16: u16,
    pub battery: BatteryState,
    pub sleep_period: f64,
    pub awake_window: f64,
    pub sensors: SensorSet,
    /// Set once the supply drops below the latch threshold; the node stays
    /// silent until explicitly reset.
    pub low_voltage_latched: bool,
    pub awake_until: Option<SimTime>,
    pub sleeping_since: SimTime,
    /// Poll held by the parent until this node wakes.
    pub pending_poll: Option<PollRequest>,
    /// Externally forced supply voltage, overriding the battery curve.
    pub supply_override: Option<f64>,
    pub frames_sent: u64,
}

impl EndDeviceState {
    pub fn new(addr64: u64, addr16: u16, battery: BatteryState, sleep_period: f64, awake_window: f64) -> Self {
        Self {
            addr64,
            addr16,
            battery,
            sleep_period,
            awake_window,
            sensors: SensorSet::default(),
            low_voltage_latched: false,
            awake_until: None,
            sleeping_since: SimTime::ZERO,
            pending_poll: None,
            supply_override: None,
            frames_sent: 0,
        }
    }

    pub fn is_awake(&self, now: SimTime) -> bool {
        self.awake_until.is_some_and(|until| now <= until)
    }

    pub fn supply_volts(&self, ctx: &NodeContext) -> f64 {
        self.supply_override
            .unwrap_or_else(|| ctx.discharge.volts(&self.battery, ctx.profile))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeEvent {
    Wake,
    Sleep,
    PollArrived(ApiFrame),
    ForceSupply(Option<f64>),
    ClearLatch,
}

/// Everything outside the node's own state that a step depends on.
#[derive(Debug, Clone)]
pub struct NodeContext<'a> {
    pub profile: &'a PowerProfile,
    pub discharge: &'a DischargeCurve,
    pub t_onoff: f64,
    pub frame_overhead_bytes: u32,
    pub bitrate: f64,
    pub divider_r1: f64,
    pub divider_r2: f64,
    pub latch_threshold_v: f64,
    /// Ambient temperature at this node right now.
    pub ambient_celsius: f64,
    /// Noise in LSB added to (AD0, AD1).
    pub jitter: (i32, i32),
    pub frame_types: FrameTypes,
    /// Send a sample on every wake instead of waiting for a poll.
    pub autonomous: bool,
}

fn apply_jitter(reading: AdcReading, lsb: i32) -> u16 {
    (reading.raw() as i32 + lsb).clamp(0, ADC_MAX as i32) as u16
}

/// Raw (AD0, AD1) the node would report right now.
pub fn sample_channels(dev: &EndDeviceState, ctx: &NodeContext) -> (u16, u16) {
    let celsius = ctx.ambient_celsius.clamp(0.0, CELSIUS_FULL_SCALE);
    let temp = celsius_to_adc(celsius).expect("clamped into range");
    let pin = divider_output(&DividerConfig {
        r1: ctx.divider_r1,
        r2: ctx.divider_r2,
        vin: dev.supply_volts(ctx).max(0.0),
    })
    .expect("validated divider");
    let supply = pin_volts_to_adc(pin.min(1.2)).expect("clamped into range");
    (apply_jitter(temp, ctx.jitter.0), apply_jitter(supply, ctx.jitter.1))
}

fn drain_or_deplete(battery: BatteryState, profile: &PowerProfile, mode: PowerMode, dt: f64) -> BatteryState {
    drain(battery, profile, mode, dt.max(0.0)).expect("mode draws current and dt is non-negative")
}

fn emit_sample(mut dev: EndDeviceState, ctx: &NodeContext) -> (EndDeviceState, Option<ApiFrame>) {
    let (temp, supply) = sample_channels(&dev, ctx);
    let mut channels = Vec::with_capacity(2);
    if dev.sensors.temperature {
        channels.push((TEMPERATURE_CHANNEL, temp));
    }
    if dev.sensors.supply_voltage {
        channels.push((SUPPLY_CHANNEL, supply));
    }
    let sample = IoSample::analog(dev.addr64, dev.addr16, &channels);
    let data = serialize_io_sample_with(&sample, ctx.frame_types).expect("10-bit samples");
    let frame = ApiFrame::new(data).expect("non-empty sample frame");
    let airtime = transmit_time(&DutyCycleSpec {
        payload_bytes: frame.frame_data().len() as u32,
        frame_overhead_bytes: ctx.frame_overhead_bytes,
        bitrate: ctx.bitrate,
        ..DutyCycleSpec::default()
    });
    dev.battery = drain_or_deplete(dev.battery, ctx.profile, PowerMode::Transmit, airtime);
    dev.frames_sent += 1;
    if dev.battery.is_depleted() {
        dev.awake_until = None;
    }
    (dev, Some(frame))
}

/// Advances one End Device by one event. Returns the frame it transmits, if any.
pub fn node_step(
    mut dev: EndDeviceState,
    event: NodeEvent,
    now: SimTime,
    ctx: &NodeContext,
) -> (EndDeviceState, Option<ApiFrame>) {
    match event {
        NodeEvent::Wake => {
            if dev.battery.is_depleted() {
                return (dev, None);
            }
            let slept = now.saturating_sub(dev.sleeping_since).as_secs();
            dev.battery = drain_or_deplete(dev.battery, ctx.profile, PowerMode::Sleep, slept);
            dev.battery = drain_or_deplete(dev.battery, ctx.profile, PowerMode::WakeTransition, ctx.t_onoff);
            dev.battery = drain_or_deplete(dev.battery, ctx.profile, PowerMode::Listen, dev.awake_window);
            dev.sleeping_since = now;
            if dev.battery.is_depleted() {
                dev.pending_poll = None;
                return (dev, None);
            }
            dev.awake_until = Some(now + SimTime::from_secs(dev.awake_window));
            if dev.supply_volts(ctx) < ctx.latch_threshold_v {
                dev.low_voltage_latched = true;
            }
            if dev.low_voltage_latched {
                dev.pending_poll = None;
                return (dev, None);
            }
            if dev.pending_poll.take().is_some() || ctx.autonomous {
                return emit_sample(dev, ctx);
            }
            (dev, None)
        }
        NodeEvent::Sleep => {
            dev.awake_until = None;
            dev.sleeping_since = now;
            if !dev.battery.is_depleted() {
                dev.battery.mode = PowerMode::Sleep;
            }
            (dev, None)
        }
        NodeEvent::PollArrived(frame) => {
            let Ok(req) = parse_poll_request_with(frame.frame_data(), ctx.frame_types) else {
                return (dev, None);
            };
            if req.dest_addr64 != dev.addr64 || dev.battery.is_depleted() || dev.low_voltage_latched {
                return (dev, None);
            }
            if dev.is_awake(now) {
                emit_sample(dev, ctx)
            } else {
                dev.pending_poll = Some(req);
                (dev, None)
            }
        }
        NodeEvent::ForceSupply(volts) => {
            dev.supply_override = volts;
            (dev, None)
        }
        NodeEvent::ClearLatch => {
            dev.low_voltage_latched = false;
            (dev, None)
        }
    }
}
