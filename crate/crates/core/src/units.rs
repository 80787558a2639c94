//! Engineering-unit conversions for the radio's 10-bit ADC.
//!
//! Forward conversions return full-precision `f64`. Inverses round half-up
//! and clamp to the 10-bit range.

use thiserror::Error;

pub const ADC_MAX: u16 = 1023;
/// ADC full-scale reference of the radio's analog inputs.
pub const ADC_REFERENCE_MV: f64 = 1200.0;
/// Ratio of the supply-sensing voltage divider (200 Ω over 100 Ω).
pub const SUPPLY_DIVIDER_RATIO: f64 = 3.0;
/// Highest supply voltage representable through the divider: 3 × 1.2 V.
pub const SUPPLY_FULL_SCALE_V: f64 = 3.6;
/// LM35 full scale against the 1.2 V reference at 10 mV/°C.
pub const CELSIUS_FULL_SCALE: f64 = 120.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitError {
    #[error("domain error: {0}")]
    Domain(String),
}

/// Raw 10-bit analog sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AdcReading(u16);

impl AdcReading {
    pub fn new(raw: u16) -> Result<Self, UnitError> {
        if raw > ADC_MAX {
            return Err(UnitError::Domain(format!("ADC reading {raw} outside 0..=1023")));
        }
        Ok(Self(raw))
    }

    pub fn raw(self) -> u16 {
        self.0
    }
}

impl TryFrom<u16> for AdcReading {
    type Error = UnitError;

    fn try_from(raw: u16) -> Result<Self, Self::Error> {
        Self::new(raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DividerConfig {
    pub r1: f64,
    pub r2: f64,
    pub vin: f64,
}

/// Round half-up, then clamp into the ADC range.
fn quantize(counts: f64) -> AdcReading {
    let rounded = (counts + 0.5).floor();
    AdcReading(rounded.clamp(0.0, ADC_MAX as f64) as u16)
}

fn check_range(what: &str, value: f64, lo: f64, hi: f64) -> Result<(), UnitError> {
    if !(lo..=hi).contains(&value) {
        return Err(UnitError::Domain(format!("{what} {value} outside [{lo}, {hi}]")));
    }
    Ok(())
}

pub fn adc_to_millivolts(reading: AdcReading) -> f64 {
    reading.0 as f64 * ADC_REFERENCE_MV / ADC_MAX as f64
}

/// LM35 output at 10 mV/°C.
pub fn millivolts_to_celsius(mv: f64) -> Result<f64, UnitError> {
    if mv.is_nan() || mv < 0.0 {
        return Err(UnitError::Domain(format!("negative sensor voltage {mv} mV")));
    }
    Ok(mv / 10.0)
}

pub fn divider_output(cfg: &DividerConfig) -> Result<f64, UnitError> {
    if !(cfg.r1 > 0.0 && cfg.r2 > 0.0) {
        return Err(UnitError::Domain(format!(
            "divider resistances must be positive, got r1={} r2={}",
            cfg.r1, cfg.r2
        )));
    }
    if cfg.vin.is_nan() || cfg.vin < 0.0 {
        return Err(UnitError::Domain(format!("divider input {} V is negative", cfg.vin)));
    }
    Ok(cfg.vin * cfg.r2 / (cfg.r1 + cfg.r2))
}

/// Supply voltage recovered from a divided-down sample; the factor 3 undoes the divider.
pub fn adc_to_supply_volts(reading: AdcReading) -> f64 {
    reading.0 as f64 * ADC_REFERENCE_MV * SUPPLY_DIVIDER_RATIO / ADC_MAX as f64 / 1000.0
}

pub fn supply_volts_to_adc(v: f64) -> Result<AdcReading, UnitError> {
    check_range("supply voltage", v, 0.0, SUPPLY_FULL_SCALE_V)?;
    Ok(quantize(
        v * 1000.0 * ADC_MAX as f64 / (ADC_REFERENCE_MV * SUPPLY_DIVIDER_RATIO),
    ))
}

/// Samples a voltage present on an analog pin against the 1.2 V reference.
pub fn pin_volts_to_adc(v: f64) -> Result<AdcReading, UnitError> {
    check_range("pin voltage", v, 0.0, ADC_REFERENCE_MV / 1000.0)?;
    Ok(quantize(v * 1000.0 * ADC_MAX as f64 / ADC_REFERENCE_MV))
}

pub fn celsius_to_adc(t: f64) -> Result<AdcReading, UnitError> {
    check_range("temperature", t, 0.0, CELSIUS_FULL_SCALE)?;
    Ok(quantize(t * 10.0 * ADC_MAX as f64 / ADC_REFERENCE_MV))
}

/// Convenience composition of the two temperature conversions.
pub fn adc_to_celsius(reading: AdcReading) -> f64 {
    adc_to_millivolts(reading) / 10.0
}
