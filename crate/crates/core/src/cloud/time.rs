use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use super::CloudError;

/// Service timestamp in whole milliseconds. Rendered as seconds with exactly
/// three decimals, in JSON as a bare number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Millis(pub u64);

impl Millis {
    pub fn from_secs_f64(s: f64) -> Self {
        Millis((s.max(0.0) * 1000.0).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn now_wall() -> Self {
        let d = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        Millis(d.as_millis() as u64)
    }
}

impl Add for Millis {
    type Output = Millis;

    fn add(self, rhs: Millis) -> Millis {
        Millis(self.0 + rhs.0)
    }
}

impl Sub for Millis {
    type Output = Millis;

    fn sub(self, rhs: Millis) -> Millis {
        Millis(self.0.saturating_sub(rhs.0))
    }
}

impl fmt::Display for Millis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

impl FromStr for Millis {
    type Err = CloudError;

    /// Parses non-negative decimal seconds with at most millisecond precision.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CloudError::BadRequest(format!("invalid timestamp {s:?}"));
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        if whole.is_empty() || frac.len() > 3 || !whole.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let secs: u64 = whole.parse().map_err(|_| bad())?;
        let ms: u64 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<3}").parse().map_err(|_| bad())?
        };
        secs.checked_mul(1000)
            .and_then(|v| v.checked_add(ms))
            .map(Millis)
            .ok_or_else(bad)
    }
}

impl Serialize for Millis {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(self.to_string()).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

struct MillisVisitor;

impl Visitor<'_> for MillisVisitor {
    type Value = Millis;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("non-negative seconds")
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Millis, E> {
        v.checked_mul(1000)
            .map(Millis)
            .ok_or_else(|| E::custom("timestamp overflow"))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Millis, E> {
        u64::try_from(v)
            .map_err(|_| E::custom("negative timestamp"))
            .and_then(|v| self.visit_u64(v))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Millis, E> {
        if !(v.is_finite() && v >= 0.0) {
            return Err(E::custom("timestamp must be finite and non-negative"));
        }
        Ok(Millis::from_secs_f64(v))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Millis, E> {
        v.parse().map_err(E::custom)
    }
}

impl<'de> Deserialize<'de> for Millis {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(MillisVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse() {
        assert_eq!(Millis(1_800_007).to_string(), "1800.007");
        assert_eq!(Millis(5).to_string(), "0.005");
        assert_eq!("1800.007".parse::<Millis>().unwrap(), Millis(1_800_007));
        assert_eq!("12.5".parse::<Millis>().unwrap(), Millis(12_500));
        assert_eq!("7".parse::<Millis>().unwrap(), Millis(7000));
        for bad in ["", "-1", "1.2345", "a", ".5"] {
            assert!(bad.parse::<Millis>().is_err(), "{bad}");
        }
    }

    #[test]
    fn json_is_a_three_decimal_number() {
        assert_eq!(serde_json::to_string(&Millis(1500)).unwrap(), "1.500");
        let back: Millis = serde_json::from_str("1.500").unwrap();
        assert_eq!(back, Millis(1500));
        let big: Millis = serde_json::from_str("1760000000.123").unwrap();
        assert_eq!(big, Millis(1_760_000_000_123));
    }
}
