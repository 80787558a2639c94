use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CloudError, FeedEntry, Millis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateFn {
    Mean,
    /// Even-sized buckets take the mean of the two middle values.
    Median,
    Sum,
    /// Last value of each bucket, placed on the window grid.
    Timescale,
}

impl FromStr for AggregateFn {
    type Err = CloudError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(AggregateFn::Mean),
            "median" => Ok(AggregateFn::Median),
            "sum" => Ok(AggregateFn::Sum),
            "timescale" => Ok(AggregateFn::Timescale),
            other => Err(CloudError::BadRequest(format!("unknown aggregate function {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub window_start: Millis,
    pub value: f64,
}

/// Buckets entries by `floor(received_at / window)` and reduces each
/// non-empty bucket. Entries are expected in entry-id order.
pub fn aggregate_entries(
    entries: &[FeedEntry],
    window_s: f64,
    func: AggregateFn,
) -> Result<Vec<AggregatePoint>, CloudError> {
    if !(window_s.is_finite() && window_s > 0.0) {
        return Err(CloudError::BadRequest(format!(
            "window must be positive, got {window_s}"
        )));
    }
    let window_ms = (window_s * 1000.0).round() as u64;
    if window_ms == 0 {
        return Err(CloudError::BadRequest(
            "window is below the 1 ms timestamp resolution".into(),
        ));
    }
    let mut buckets: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for e in entries {
        buckets
            .entry(e.received_at.0 / window_ms)
            .or_default()
            .push(e.numeric_value());
    }
    Ok(buckets
        .into_iter()
        .map(|(bucket, values)| AggregatePoint {
            window_start: Millis(bucket * window_ms),
            value: reduce(&values, func),
        })
        .collect())
}

fn reduce(values: &[f64], func: AggregateFn) -> f64 {
    match func {
        AggregateFn::Sum => values.iter().sum(),
        AggregateFn::Mean => values.iter().sum::<f64>() / values.len() as f64,
        AggregateFn::Timescale => *values.last().expect("buckets are non-empty"),
        AggregateFn::Median => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mid = sorted.len() / 2;
            if sorted.len() % 2 == 1 {
                sorted[mid]
            } else {
                (sorted[mid - 1] + sorted[mid]) / 2.0
            }
        }
    }
}
