//! In-memory feed service standing in for the cloud supervision layer.
//!
//! Feeds are append-only series of [`FeedEntry`]. Every append happens under
//! the store's write lock, which is where entry ids are assigned, so ids are
//! strictly increasing in arrival order no matter how many clients post
//! concurrently. Alert rules are evaluated synchronously on each append.

mod aggregate;
pub mod client;
pub mod drill;
pub mod http;
mod latency;
mod rules;
mod time;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use aggregate::{aggregate_entries, AggregateFn, AggregatePoint};
pub use latency::LatencyDistribution;
pub use rules::{AlertRule, Channel, Comparison, Notification, RuleSpec};
pub use time::Millis;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CloudError {
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("not-found: {0}")]
    NotFound(String),
    #[error("bad-request: {0}")]
    BadRequest(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
}

impl CloudError {
    pub fn code(&self) -> &'static str {
        match self {
            CloudError::Unauthorized(_) => "unauthorized",
            CloudError::NotFound(_) => "not-found",
            CloudError::BadRequest(_) => "bad-request",
            CloudError::Unavailable(_) => "unavailable",
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            CloudError::Unauthorized(d)
            | CloudError::NotFound(d)
            | CloudError::BadRequest(d)
            | CloudError::Unavailable(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiKey {
    pub key: String,
    pub owner: String,
}

/// One stored datum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedEntry {
    pub entry_id: u64,
    pub feed_id: String,
    /// Decimal string exactly as posted.
    pub value: String,
    pub received_at: Millis,
}

impl FeedEntry {
    pub fn numeric_value(&self) -> f64 {
        // validated on the way in
        self.value.parse().unwrap_or(f64::NAN)
    }
}

/// Result of a successful post: the stored entry plus any alerts it raised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posted {
    pub entry: FeedEntry,
    pub notifications: Vec<Notification>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TimeRange {
    pub from: Option<Millis>,
    pub to: Option<Millis>,
}

impl TimeRange {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn new(from: Option<Millis>, to: Option<Millis>) -> Result<Self, CloudError> {
        if let (Some(f), Some(t)) = (from, to) {
            if f > t {
                return Err(CloudError::BadRequest(format!("range start {f} is after end {t}")));
            }
        }
        Ok(Self { from, to })
    }

    pub fn contains(&self, t: Millis) -> bool {
        self.from.is_none_or(|f| t >= f) && self.to.is_none_or(|e| t <= e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesFormat {
    Json,
    Csv,
}

impl std::str::FromStr for SeriesFormat {
    type Err = CloudError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(SeriesFormat::Json),
            "csv" => Ok(SeriesFormat::Csv),
            other => Err(CloudError::BadRequest(format!("unknown format {other:?}"))),
        }
    }
}

pub const CSV_HEADER: &str = "entry_id,feed_id,value,received_at";

#[derive(Debug, Clone)]
pub struct CloudConfig {
    pub latency: LatencyDistribution,
    pub seed: u64,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            latency: LatencyDistribution::Uniform { low: 8.0, high: 13.0 },
            seed: 0,
        }
    }
}

/// Serializable image of the whole store; also the input of [`FeedService::digest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub keys: Vec<ApiKey>,
    pub feeds: BTreeMap<String, Vec<FeedEntry>>,
    pub rules: Vec<AlertRule>,
    pub sinks: BTreeMap<String, Channel>,
    pub notifications: Vec<Notification>,
    pub next_entry_id: u64,
    pub next_rule_id: u64,
}

struct Store {
    keys: BTreeMap<String, String>,
    feeds: BTreeMap<String, Vec<FeedEntry>>,
    rules: Vec<AlertRule>,
    sinks: BTreeMap<String, Channel>,
    notifications: Vec<Notification>,
    next_entry_id: u64,
    next_rule_id: u64,
    last_received: Millis,
    latency: LatencyDistribution,
    rng: ChaCha8Rng,
}

impl Store {
    fn authorize(&self, key: &str) -> Result<(), CloudError> {
        if self.keys.contains_key(key) {
            Ok(())
        } else {
            Err(CloudError::Unauthorized("missing or unknown sense key".into()))
        }
    }
}

pub struct FeedService {
    store: RwLock<Store>,
}

impl FeedService {
    pub fn new(config: CloudConfig) -> Self {
        let sinks = [
            ("email", Channel::EmailSim),
            ("twitter", Channel::TweetSim),
            ("log", Channel::Log),
        ]
        .into_iter()
        .map(|(id, ch)| (id.to_string(), ch))
        .collect();
        Self {
            store: RwLock::new(Store {
                keys: BTreeMap::new(),
                feeds: BTreeMap::new(),
                rules: Vec::new(),
                sinks,
                notifications: Vec::new(),
                next_entry_id: 1,
                next_rule_id: 1,
                last_received: Millis(0),
                latency: config.latency,
                rng: ChaCha8Rng::seed_from_u64(config.seed),
            }),
        }
    }

    pub fn shared(config: CloudConfig) -> Arc<Self> {
        Arc::new(Self::new(config))
    }

    fn read(&self) -> RwLockReadGuard<'_, Store> {
        self.store.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Store> {
        self.store.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Administrative: installs an account key.
    pub fn register_key(&self, key: &str, owner: &str) {
        self.write().keys.insert(key.to_string(), owner.to_string());
    }

    /// Administrative: adds a named notification sink.
    pub fn register_sink(&self, sink_id: &str, channel: Channel) {
        self.write().sinks.insert(sink_id.to_string(), channel);
    }

    /// Creates `feed_id` if absent. Idempotent.
    pub fn create_feed(&self, key: &str, feed_id: &str) -> Result<(), CloudError> {
        let mut store = self.write();
        store.authorize(key)?;
        validate_feed_id(feed_id)?;
        store.feeds.entry(feed_id.to_string()).or_default();
        Ok(())
    }

    pub fn feed_ids(&self) -> Vec<String> {
        self.read().feeds.keys().cloned().collect()
    }

    pub fn add_rule(&self, key: &str, spec: RuleSpec) -> Result<AlertRule, CloudError> {
        let mut store = self.write();
        store.authorize(key)?;
        if !store.feeds.contains_key(&spec.feed_id) {
            return Err(CloudError::NotFound(format!("feed {:?}", spec.feed_id)));
        }
        if !store.sinks.contains_key(&spec.target) {
            return Err(CloudError::NotFound(format!("notification sink {:?}", spec.target)));
        }
        if !spec.threshold.is_finite() {
            return Err(CloudError::BadRequest("threshold must be finite".into()));
        }
        let rule = AlertRule {
            rule_id: store.next_rule_id,
            feed_id: spec.feed_id,
            comparison: spec.comparison,
            threshold: spec.threshold,
            target: spec.target,
            armed: true,
        };
        store.next_rule_id += 1;
        store.rules.push(rule.clone());
        Ok(rule)
    }

    pub fn rules(&self) -> Vec<AlertRule> {
        self.read().rules.clone()
    }

    /// Appends `value` to `feed_id`. `now` is clamped so `received_at` never
    /// decreases along entry ids.
    pub fn post_event(&self, key: &str, feed_id: &str, value: &str, now: Millis) -> Result<Posted, CloudError> {
        let mut store = self.write();
        store.authorize(key)?;
        if !store.feeds.contains_key(feed_id) {
            return Err(CloudError::NotFound(format!("feed {feed_id:?}")));
        }
        validate_decimal(value)?;
        let received_at = now.max(store.last_received);
        let entry = FeedEntry {
            entry_id: store.next_entry_id,
            feed_id: feed_id.to_string(),
            value: value.to_string(),
            received_at,
        };
        store.next_entry_id += 1;
        store.last_received = received_at;
        store.feeds.get_mut(feed_id).expect("checked above").push(entry.clone());
        let notifications = evaluate_rules(&mut store, &entry);
        Ok(Posted { entry, notifications })
    }

    pub fn entries(&self, feed_id: &str, range: TimeRange) -> Result<Vec<FeedEntry>, CloudError> {
        let store = self.read();
        let feed = store
            .feeds
            .get(feed_id)
            .ok_or_else(|| CloudError::NotFound(format!("feed {feed_id:?}")))?;
        Ok(feed.iter().filter(|e| range.contains(e.received_at)).cloned().collect())
    }

    pub fn latest(&self, feed_id: &str) -> Result<Option<FeedEntry>, CloudError> {
        let store = self.read();
        let feed = store
            .feeds
            .get(feed_id)
            .ok_or_else(|| CloudError::NotFound(format!("feed {feed_id:?}")))?;
        Ok(feed.last().cloned())
    }

    pub fn get_feed(&self, feed_id: &str, range: TimeRange, format: SeriesFormat) -> Result<String, CloudError> {
        let entries = self.entries(feed_id, range)?;
        Ok(match format {
            SeriesFormat::Json => entries_to_json(&entries),
            SeriesFormat::Csv => entries_to_csv(&entries),
        })
    }

    pub fn aggregate(
        &self,
        feed_id: &str,
        window_s: f64,
        func: AggregateFn,
    ) -> Result<Vec<AggregatePoint>, CloudError> {
        let entries = self.entries(feed_id, TimeRange::all())?;
        aggregate_entries(&entries, window_s, func)
    }

    pub fn notifications(&self) -> Vec<Notification> {
        self.read().notifications.clone()
    }

    pub fn total_entries(&self) -> usize {
        self.read().feeds.values().map(Vec::len).sum()
    }

    pub fn snapshot(&self) -> Snapshot {
        let store = self.read();
        Snapshot {
            keys: store
                .keys
                .iter()
                .map(|(key, owner)| ApiKey {
                    key: key.clone(),
                    owner: owner.clone(),
                })
                .collect(),
            feeds: store.feeds.clone(),
            rules: store.rules.clone(),
            sinks: store.sinks.clone(),
            notifications: store.notifications.clone(),
            next_entry_id: store.next_entry_id,
            next_rule_id: store.next_rule_id,
        }
    }

    pub fn restore(snapshot: Snapshot, config: CloudConfig) -> Self {
        let service = Self::new(config);
        {
            let mut store = service.write();
            store.last_received = snapshot
                .feeds
                .values()
                .flat_map(|f| f.iter().map(|e| e.received_at))
                .max()
                .unwrap_or(Millis(0));
            store.keys = snapshot.keys.into_iter().map(|k| (k.key, k.owner)).collect();
            store.feeds = snapshot.feeds;
            store.rules = snapshot.rules;
            store.sinks = snapshot.sinks;
            store.notifications = snapshot.notifications;
            store.next_entry_id = snapshot.next_entry_id;
            store.next_rule_id = snapshot.next_rule_id;
        }
        service
    }

    /// SHA-256 over the canonical JSON snapshot.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(&self.snapshot()).expect("snapshot serializes");
        Sha256::digest(&json).into()
    }
}

fn evaluate_rules(store: &mut Store, entry: &FeedEntry) -> Vec<Notification> {
    let value = entry.numeric_value();
    let Store {
        rules,
        sinks,
        notifications,
        latency,
        rng,
        ..
    } = store;
    let mut fired = Vec::new();
    for rule in rules.iter_mut().filter(|r| r.feed_id == entry.feed_id) {
        if rules::step_rule(rule, value) {
            let delay = latency.sample_millis(rng);
            let n = Notification {
                rule_id: rule.rule_id,
                entry_id: entry.entry_id,
                feed_id: entry.feed_id.clone(),
                value: entry.value.clone(),
                created_at: entry.received_at,
                delivered_at: entry.received_at + delay,
                channel: sinks.get(&rule.target).copied().unwrap_or(Channel::Log),
                target: rule.target.clone(),
            };
            notifications.push(n.clone());
            fired.push(n);
        }
    }
    fired
}

fn validate_feed_id(feed_id: &str) -> Result<(), CloudError> {
    let ok = !feed_id.is_empty()
        && feed_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(CloudError::BadRequest(format!("invalid feed id {feed_id:?}")))
    }
}

/// Accepts `[+-]digits[.digits]`.
fn validate_decimal(value: &str) -> Result<(), CloudError> {
    let body = value.strip_prefix(['-', '+']).unwrap_or(value);
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits = |s: &str| s.chars().all(|c| c.is_ascii_digit());
    let ok = digits(int) && digits(frac) && !(int.is_empty() && frac.is_empty()) && !body.ends_with('.');
    if ok && value.parse::<f64>().is_ok_and(f64::is_finite) {
        Ok(())
    } else {
        Err(CloudError::BadRequest(format!(
            "value {value:?} is not a finite decimal"
        )))
    }
}

pub fn entries_to_json(entries: &[FeedEntry]) -> String {
    serde_json::to_string(entries).expect("entries serialize")
}

pub fn entries_to_csv(entries: &[FeedEntry]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for e in entries {
        w.write_record([
            e.entry_id.to_string(),
            e.feed_id.clone(),
            e.value.clone(),
            e.received_at.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn entries_from_json(text: &str) -> Result<Vec<FeedEntry>, CloudError> {
    serde_json::from_str(text).map_err(|e| CloudError::BadRequest(format!("bad series json: {e}")))
}

pub fn entries_from_csv(text: &str) -> Result<Vec<FeedEntry>, CloudError> {
    let bad = |e: String| CloudError::BadRequest(format!("bad series csv: {e}"));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            Ok(FeedEntry {
                entry_id: rec[0].parse().map_err(|_| bad(format!("entry id {:?}", &rec[0])))?,
                feed_id: rec[1].to_string(),
                value: rec[2].to_string(),
                received_at: rec[3].parse().map_err(|e: CloudError| bad(e.to_string()))?,
            })
        })
        .collect()
}
