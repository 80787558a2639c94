use std::f64::consts::TAU;

use super::config::EnvironmentConfig;

/// Ambient temperature at a node, °C.
pub fn temperature_at(env: &EnvironmentConfig, t_s: f64) -> f64 {
    match env {
        EnvironmentConfig::Constant { celsius } => *celsius,
        EnvironmentConfig::Sinusoid {
            mean,
            amplitude,
            period_s,
            phase_s,
        } => mean + amplitude * (TAU * (t_s + phase_s) / period_s).sin(),
        EnvironmentConfig::Trace { samples, .. } => interpolate(samples, t_s),
    }
}

fn interpolate(samples: &[(f64, f64)], t: f64) -> f64 {
    let idx = samples.partition_point(|(ts, _)| *ts <= t);
    match idx {
        0 => samples[0].1,
        i if i == samples.len() => samples[i - 1].1,
        i => {
            let (t0, c0) = samples[i - 1];
            let (t1, c1) = samples[i];
            c0 + (c1 - c0) * (t - t0) / (t1 - t0)
        }
    }
}
