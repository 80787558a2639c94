//! Base-station side of the uplink: where the coordinator sends its posts.

use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde_json::json;

use super::http::KEY_HEADER;
use super::{AlertRule, CloudError, FeedEntry, FeedService, Millis, Notification, RuleSpec};

pub trait CloudSink {
    /// Creates the feed if it does not exist yet.
    fn ensure_feed(&mut self, feed_id: &str) -> Result<(), CloudError>;
    fn add_rule(&mut self, rule: RuleSpec) -> Result<AlertRule, CloudError>;
    /// `now` is the sender's clock; remote services stamp with their own.
    fn post(&mut self, feed_id: &str, value: &str, now: Millis) -> Result<FeedEntry, CloudError>;
    fn notifications(&mut self) -> Result<Vec<Notification>, CloudError>;
}

/// Posts straight into an in-process service.
pub struct LocalCloud {
    service: Arc<FeedService>,
    key: String,
}

impl LocalCloud {
    pub fn new(service: Arc<FeedService>, key: &str) -> Self {
        Self {
            service,
            key: key.to_string(),
        }
    }

    pub fn service(&self) -> &Arc<FeedService> {
        &self.service
    }
}

impl CloudSink for LocalCloud {
    fn ensure_feed(&mut self, feed_id: &str) -> Result<(), CloudError> {
        self.service.create_feed(&self.key, feed_id)
    }

    fn add_rule(&mut self, rule: RuleSpec) -> Result<AlertRule, CloudError> {
        self.service.add_rule(&self.key, rule)
    }

    fn post(&mut self, feed_id: &str, value: &str, now: Millis) -> Result<FeedEntry, CloudError> {
        self.service.post_event(&self.key, feed_id, value, now).map(|p| p.entry)
    }

    fn notifications(&mut self) -> Result<Vec<Notification>, CloudError> {
        Ok(self.service.notifications())
    }
}

/// Talks to a feed service over HTTP. The blocking client keeps its
/// connection pool, so consecutive posts reuse the TCP connection.
pub struct RemoteCloud {
    base: String,
    key: String,
    client: reqwest::blocking::Client,
}

impl RemoteCloud {
    pub fn new(base_url: &str, key: &str) -> Result<Self, CloudError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| CloudError::Unavailable(e.to_string()))?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            key: key.to_string(),
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn decode<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T, CloudError> {
        let status = resp.status();
        let text = resp.text().map_err(|e| CloudError::Unavailable(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_str(&text)
                .map_err(|e| CloudError::Unavailable(format!("unexpected response body: {e}")));
        }
        let detail = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v.get("detail").and_then(|d| d.as_str()).map(str::to_string))
            .unwrap_or(text);
        Err(match status.as_u16() {
            401 => CloudError::Unauthorized(detail),
            404 => CloudError::NotFound(detail),
            400 => CloudError::BadRequest(detail),
            _ => CloudError::Unavailable(format!("HTTP {status}: {detail}")),
        })
    }

    fn send_json<T: DeserializeOwned>(&self, path: &str, body: serde_json::Value) -> Result<T, CloudError> {
        let resp = self
            .client
            .post(self.url(path))
            .header(KEY_HEADER, &self.key)
            .json(&body)
            .send()
            .map_err(|e| CloudError::Unavailable(e.to_string()))?;
        Self::decode(resp)
    }

    pub fn get_text(&self, path: &str) -> Result<String, CloudError> {
        let resp = self
            .client
            .get(self.url(path))
            .send()
            .map_err(|e| CloudError::Unavailable(e.to_string()))?;
        if resp.status().is_success() {
            resp.text().map_err(|e| CloudError::Unavailable(e.to_string()))
        } else {
            Self::decode::<serde_json::Value>(resp).map(|v| v.to_string())
        }
    }
}

impl CloudSink for RemoteCloud {
    fn ensure_feed(&mut self, feed_id: &str) -> Result<(), CloudError> {
        self.send_json::<serde_json::Value>("/feeds", json!({ "feed_id": feed_id }))
            .map(|_| ())
    }

    fn add_rule(&mut self, rule: RuleSpec) -> Result<AlertRule, CloudError> {
        let body = serde_json::to_value(rule).expect("rule spec serializes");
        self.send_json("/rules", body)
    }

    fn post(&mut self, feed_id: &str, value: &str, _now: Millis) -> Result<FeedEntry, CloudError> {
        self.send_json("/events", json!({ "feed_id": feed_id, "value": value }))
    }

    fn notifications(&mut self) -> Result<Vec<Notification>, CloudError> {
        let resp = self
            .client
            .get(self.url("/notifications"))
            .send()
            .map_err(|e| CloudError::Unavailable(e.to_string()))?;
        Self::decode(resp)
    }
}
