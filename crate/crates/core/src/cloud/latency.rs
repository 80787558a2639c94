use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Millis;

/// Delivery delay of simulated notifications, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencyDistribution {
    Constant(f64),
    Uniform { low: f64, high: f64 },
}

impl LatencyDistribution {
    pub fn sample_secs<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            LatencyDistribution::Constant(s) => s,
            LatencyDistribution::Uniform { low, high } if low == high => low,
            LatencyDistribution::Uniform { low, high } => rng.random_range(low..=high),
        }
    }

    pub fn sample_millis<R: Rng + ?Sized>(&self, rng: &mut R) -> Millis {
        Millis::from_secs_f64(self.sample_secs(rng))
    }
}

impl fmt::Display for LatencyDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyDistribution::Constant(s) => write!(f, "constant:{s}"),
            LatencyDistribution::Uniform { low, high } => write!(f, "uniform:{low}:{high}"),
        }
    }
}

impl FromStr for LatencyDistribution {
    type Err = String;

    /// `constant:S` or `uniform:LOW:HIGH`, seconds.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| -> Result<f64, String> {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| format!("latency value {p:?} must be a non-negative number"))
        };
        match parts.as_slice() {
            ["constant", v] => Ok(LatencyDistribution::Constant(num(v)?)),
            ["uniform", lo, hi] => {
                let (low, high) = (num(lo)?, num(hi)?);
                if low > high {
                    return Err(format!("uniform latency bounds reversed: {low} > {high}"));
                }
                Ok(LatencyDistribution::Uniform { low, high })
            }
            _ => Err(format!("latency {s:?} must be constant:S or uniform:LOW:HIGH")),
        }
    }
}

impl Serialize for LatencyDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LatencyDistribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_forms() {
        assert_eq!("constant:11".parse(), Ok(LatencyDistribution::Constant(11.0)));
        assert_eq!(
            "uniform:8:13".parse(),
            Ok(LatencyDistribution::Uniform { low: 8.0, high: 13.0 })
        );
        for bad in ["uniform:13:8", "normal:1:2", "constant", "constant:-1", "uniform:a:b"] {
            assert!(bad.parse::<LatencyDistribution>().is_err(), "{bad}");
        }
    }

    #[test]
    fn uniform_draws_stay_in_bounds() {
        let d = LatencyDistribution::Uniform { low: 8.0, high: 13.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let m = d.sample_millis(&mut rng);
            assert!((8000..=13000).contains(&m.0));
        }
    }
}
