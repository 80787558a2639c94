//! Battery accounting and the duty-cycle lifetime model.
//!
//! One update period of a cyclic-sleep End Device is: wake transition, listen
//! window, one transmission, then sleep for the remainder. Lifetime is battery
//! capacity over the time-weighted average current of that cycle.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_PAYLOAD_BYTES: u32 = 2;
/// Largest 802.15.4 MAC payload.
pub const MAX_PAYLOAD_BYTES: u32 = 102;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerError {
    #[error("invalid power profile: {0}")]
    InvalidProfile(String),
    #[error("invalid duty cycle: {0}")]
    InvalidSpec(String),
    #[error("model error: active time {active_s} s is not shorter than update period {period_s} s")]
    ActiveExceedsPeriod { active_s: f64, period_s: f64 },
    #[error("domain error: {0}")]
    Domain(String),
}

/// Measured End Device currents (mA) and battery rating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerProfile {
    pub i_onoff: f64,
    pub i_listen: f64,
    pub i_trans: f64,
    pub i_sleep: f64,
    /// mAh
    pub capacity: f64,
    pub nominal_voltage: f64,
}

impl Default for PowerProfile {
    /// The measured XBee ZB End Device on a 2000 mAh 9 V pack.
    fn default() -> Self {
        Self {
            i_onoff: 8.1,
            i_listen: 40.0,
            i_trans: 38.0,
            i_sleep: 0.6,
            capacity: 2000.0,
            nominal_voltage: 9.0,
        }
    }
}

impl PowerProfile {
    pub fn validate(&self) -> Result<(), PowerError> {
        let currents = [
            ("i_onoff", self.i_onoff),
            ("i_listen", self.i_listen),
            ("i_trans", self.i_trans),
            ("i_sleep", self.i_sleep),
        ];
        if let Some((name, v)) = currents.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(PowerError::InvalidProfile(format!("{name} must be positive, got {v}")));
        }
        if !(self.i_sleep < self.i_listen && self.i_sleep < self.i_trans) {
            return Err(PowerError::InvalidProfile(
                "i_sleep must be below both i_listen and i_trans".into(),
            ));
        }
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(PowerError::InvalidProfile(format!(
                "capacity must be positive, got {}",
                self.capacity
            )));
        }
        Ok(())
    }

    pub fn current(&self, mode: PowerMode) -> Result<f64, PowerError> {
        match mode {
            PowerMode::Sleep => Ok(self.i_sleep),
            PowerMode::WakeTransition => Ok(self.i_onoff),
            PowerMode::Listen => Ok(self.i_listen),
            PowerMode::Transmit => Ok(self.i_trans),
            PowerMode::Depleted => Err(PowerError::Domain("depleted battery draws no modeled current".into())),
        }
    }

    /// Sleep-only lifetime bound in hours.
    pub fn sleep_bound_hours(&self) -> f64 {
        self.capacity / self.i_sleep
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    Sleep,
    WakeTransition,
    Listen,
    Transmit,
    Depleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    /// mAh
    pub charge_remaining: f64,
    pub mode: PowerMode,
}

impl BatteryState {
    pub fn full(profile: &PowerProfile) -> Self {
        Self::with_charge(profile.capacity)
    }

    pub fn with_charge(charge_mah: f64) -> Self {
        let charge_remaining = charge_mah.max(0.0);
        Self {
            charge_remaining,
            mode: if charge_remaining > 0.0 {
                PowerMode::Sleep
            } else {
                PowerMode::Depleted
            },
        }
    }

    pub fn is_depleted(&self) -> bool {
        self.mode == PowerMode::Depleted
    }

    pub fn state_of_charge(&self, profile: &PowerProfile) -> f64 {
        (self.charge_remaining / profile.capacity).clamp(0.0, 1.0)
    }
}

/// Integrates the current of `mode` over `dt` seconds.
pub fn drain(
    state: BatteryState,
    profile: &PowerProfile,
    mode: PowerMode,
    dt: f64,
) -> Result<BatteryState, PowerError> {
    if dt.is_nan() || dt < 0.0 {
        return Err(PowerError::Domain(format!("negative drain interval {dt} s")));
    }
    let current = profile.current(mode)?;
    if state.is_depleted() {
        return Ok(state);
    }
    let charge_remaining = (state.charge_remaining - current * dt / 3600.0).max(0.0);
    let mode = if charge_remaining == 0.0 {
        PowerMode::Depleted
    } else {
        mode
    };
    Ok(BatteryState { charge_remaining, mode })
}

/// Supply-rail voltage as a linear function of state of charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DischargeCurve {
    pub full_volts: f64,
    pub empty_volts: f64,
}

impl Default for DischargeCurve {
    fn default() -> Self {
        Self {
            full_volts: 3.3,
            empty_volts: 2.0,
        }
    }
}

impl DischargeCurve {
    pub fn volts(&self, state: &BatteryState, profile: &PowerProfile) -> f64 {
        self.empty_volts + (self.full_volts - self.empty_volts) * state.state_of_charge(profile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DutyCycleSpec {
    pub update_period: f64,
    pub payload_bytes: u32,
    pub t_onoff: f64,
    pub t_listen: f64,
    pub frame_overhead_bytes: u32,
    /// bits per second
    pub bitrate: f64,
}

impl Default for DutyCycleSpec {
    fn default() -> Self {
        Self {
            update_period: 1800.0,
            payload_bytes: MIN_PAYLOAD_BYTES,
            t_onoff: 0.010,
            t_listen: 0.050,
            frame_overhead_bytes: 26,
            bitrate: 250_000.0,
        }
    }
}

impl DutyCycleSpec {
    pub fn with(update_period: f64, payload_bytes: u32) -> Self {
        Self {
            update_period,
            payload_bytes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        if !(MIN_PAYLOAD_BYTES..=MAX_PAYLOAD_BYTES).contains(&self.payload_bytes) {
            return Err(PowerError::InvalidSpec(format!(
                "payload_bytes {} outside {MIN_PAYLOAD_BYTES}..={MAX_PAYLOAD_BYTES}",
                self.payload_bytes
            )));
        }
        if !(self.update_period.is_finite() && self.update_period > 0.0) {
            return Err(PowerError::InvalidSpec(format!(
                "update_period must be positive, got {}",
                self.update_period
            )));
        }
        if !(self.bitrate.is_finite() && self.bitrate > 0.0) {
            return Err(PowerError::InvalidSpec(format!(
                "bitrate must be positive, got {}",
                self.bitrate
            )));
        }
        if !(self.t_onoff >= 0.0 && self.t_listen >= 0.0) {
            return Err(PowerError::InvalidSpec("phase durations must be non-negative".into()));
        }
        let active_s = self.active_time();
        if active_s >= self.update_period {
            return Err(PowerError::ActiveExceedsPeriod {
                active_s,
                period_s: self.update_period,
            });
        }
        Ok(())
    }

    pub fn active_time(&self) -> f64 {
        self.t_onoff + self.t_listen + transmit_time(self)
    }
}

pub fn transmit_time(spec: &DutyCycleSpec) -> f64 {
    (spec.payload_bytes + spec.frame_overhead_bytes) as f64 * 8.0 / spec.bitrate
}

/// Time-weighted mean current (mA) over one update period.
pub fn average_current(profile: &PowerProfile, spec: &DutyCycleSpec) -> Result<f64, PowerError> {
    spec.validate()?;
    let period = spec.update_period;
    let t_trans = transmit_time(spec);
    let t_sleep = period - spec.t_onoff - spec.t_listen - t_trans;
    let charge = profile.i_onoff * spec.t_onoff
        + profile.i_listen * spec.t_listen
        + profile.i_trans * t_trans
        + profile.i_sleep * t_sleep;
    Ok(charge / period)
}

pub fn lifetime_hours(profile: &PowerProfile, spec: &DutyCycleSpec) -> Result<f64, PowerError> {
    Ok(profile.capacity / average_current(profile, spec)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub payload_bytes: u32,
    pub update_period_s: f64,
    pub avg_current_ma: f64,
    pub lifetime_hours: f64,
}

/// Evaluates the lifetime model over `payloads × periods`, payload-major.
/// `template` supplies the timing parameters that are not swept.
pub fn lifetime_sweep(
    profile: &PowerProfile,
    template: &DutyCycleSpec,
    payloads: &[u32],
    periods: &[f64],
) -> Result<Vec<SweepRow>, PowerError> {
    if payloads.is_empty() || periods.is_empty() {
        return Err(PowerError::InvalidSpec(
            "sweep needs at least one payload and one period".into(),
        ));
    }
    profile.validate()?;
    let mut rows = Vec::with_capacity(payloads.len() * periods.len());
    for &payload_bytes in payloads {
        for &update_period in periods {
            let spec = DutyCycleSpec {
                update_period,
                payload_bytes,
                ..*template
            };
            let avg_current_ma = average_current(profile, &spec)?;
            rows.push(SweepRow {
                payload_bytes,
                update_period_s: update_period,
                avg_current_ma,
                lifetime_hours: profile.capacity / avg_current_ma,
            });
        }
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: [&str; 4] = ["payload_bytes", "update_period_s", "avg_current_ma", "lifetime_hours"];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(SWEEP_CSV_HEADER)?;
    }
    w.flush()?;
    Ok(())
}
