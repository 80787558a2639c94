use serde::{Deserialize, Serialize};

use super::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Le,
    Ge,
    Eq,
}

impl Comparison {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Le => value <= threshold,
            Comparison::Ge => value >= threshold,
            Comparison::Eq => value == threshold,
        }
    }
}

impl std::str::FromStr for Comparison {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "le" | "<=" => Ok(Comparison::Le),
            "ge" | ">=" => Ok(Comparison::Ge),
            "eq" | "==" => Ok(Comparison::Eq),
            other => Err(format!("unknown comparison {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    EmailSim,
    TweetSim,
    Log,
}

/// Request body for creating a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub feed_id: String,
    pub comparison: Comparison,
    pub threshold: f64,
    /// Notification sink id.
    pub target: String,
}

impl RuleSpec {
    pub fn new(feed_id: &str, comparison: Comparison, threshold: f64, target: &str) -> Self {
        Self {
            feed_id: feed_id.to_string(),
            comparison,
            threshold,
            target: target.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRule {
    pub rule_id: u64,
    pub feed_id: String,
    pub comparison: Comparison,
    pub threshold: f64,
    pub target: String,
    pub armed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub rule_id: u64,
    pub entry_id: u64,
    pub feed_id: String,
    pub value: String,
    pub created_at: Millis,
    pub delivered_at: Millis,
    pub channel: Channel,
    pub target: String,
}

impl Notification {
    pub fn latency(&self) -> Millis {
        self.delivered_at - self.created_at
    }
}

/// Advances one rule over a new value; true when it fires. A rule fires on
/// the armed→true edge and re-arms once its condition is false again.
pub(super) fn step_rule(rule: &mut AlertRule, value: f64) -> bool {
    let holds = rule.comparison.holds(value, rule.threshold);
    if rule.armed && holds {
        rule.armed = false;
        true
    } else {
        if !holds {
            rule.armed = true;
        }
        false
    }
}
