use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use wsn_core::cloud::client::{CloudSink, RemoteCloud};
use wsn_core::cloud::http::{ServerHandle, KEY_HEADER};
use wsn_core::cloud::{
    entries_from_csv, entries_from_json, CloudConfig, CloudError, FeedService, LatencyDistribution, Millis, TimeRange,
};
use wsn_core::netsim::{Scenario, SimTime, Simulation};

const KEY: &str = "secret";

struct Fixture {
    service: Arc<FeedService>,
    clock: Arc<AtomicU64>,
    server: ServerHandle,
    http: Client,
}

impl Fixture {
    fn new() -> Self {
        let service = FeedService::shared(CloudConfig {
            latency: LatencyDistribution::Constant(11.0),
            seed: 3,
        });
        service.register_key(KEY, "test");
        let clock = Arc::new(AtomicU64::new(1_000));
        let ticks = clock.clone();
        let server = ServerHandle::start(
            service.clone(),
            Arc::new(move || Millis(ticks.load(Ordering::SeqCst))),
            SocketAddr::from(([127, 0, 0, 1], 0)),
        )
        .unwrap();
        Self {
            service,
            clock,
            server,
            http: Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.server.base_url())
    }

    fn post(&self, path: &str, key: &str, body: Value) -> (StatusCode, Value) {
        let resp = self
            .http
            .post(self.url(path))
            .header(KEY_HEADER, key)
            .json(&body)
            .send()
            .unwrap();
        let status = resp.status();
        (status, resp.json().unwrap_or(Value::Null))
    }

    fn get(&self, path: &str) -> (StatusCode, String) {
        let resp = self.http.get(self.url(path)).send().unwrap();
        (resp.status(), resp.text().unwrap())
    }

    fn set_time_ms(&self, ms: u64) {
        self.clock.store(ms, Ordering::SeqCst);
    }
}

#[test]
fn auth_and_error_statuses() {
    let f = Fixture::new();
    let (status, body) = f.post("/feeds", "wrong", json!({"feed_id": "t"}));
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"], "unauthorized");

    assert_eq!(f.post("/feeds", KEY, json!({"feed_id": "t"})).0, StatusCode::CREATED);
    let before = f.service.digest();
    assert_eq!(
        f.post("/events", "", json!({"feed_id": "t", "value": "1"})).0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(f.service.digest(), before);

    let (status, body) = f.post("/events", KEY, json!({"feed_id": "nope", "value": "1"}));
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not-found");
    let (status, body) = f.post("/events", KEY, json!({"feed_id": "t", "value": "warm"}));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "bad-request");
    assert_eq!(f.get("/feeds/t/events?format=xml").0, StatusCode::BAD_REQUEST);
    assert_eq!(f.get("/feeds/t/events?from=5&to=1").0, StatusCode::BAD_REQUEST);
    assert_eq!(f.get("/feeds/t/latest").0, StatusCode::NOT_FOUND);
    assert_eq!(f.get("/feeds/t/aggregate?window=60&fn=mode").0, StatusCode::BAD_REQUEST);
    assert_eq!(f.service.digest(), before);
}

#[test]
fn events_series_and_range_queries() {
    let f = Fixture::new();
    f.post("/feeds", KEY, json!({"feed_id": "temp"}));
    for (t, v) in [(1_000, json!("24.50")), (2_500, json!(25)), (4_000, json!("-1.25"))] {
        f.set_time_ms(t);
        let (status, entry) = f.post("/events", KEY, json!({"feed_id": "temp", "value": v}));
        assert_eq!(status, StatusCode::OK, "{entry}");
    }
    let (_, json_text) = f.get("/feeds/temp/events");
    let (_, csv_text) = f.get("/feeds/temp/events?format=csv");
    let a = entries_from_json(&json_text).unwrap();
    let b = entries_from_csv(&csv_text).unwrap();
    assert_eq!(a, b);
    let values: Vec<&str> = a.iter().map(|e| e.value.as_str()).collect();
    assert_eq!(values, ["24.50", "25", "-1.25"]);

    let (_, window) = f.get("/feeds/temp/events?from=2.000&to=4.000");
    let window = entries_from_json(&window).unwrap();
    assert_eq!(window.len(), 2);
    assert_eq!(window[0].received_at, Millis(2_500));

    let (_, latest) = f.get("/feeds/temp/latest");
    assert!(latest.contains(r#""received_at":4.000"#), "{latest}");
    let latest: Value = serde_json::from_str(&latest).unwrap();
    assert_eq!(latest["value"], "-1.25");

    let (status, agg) = f.get("/feeds/temp/aggregate?window=2&fn=sum");
    assert_eq!(status, StatusCode::OK);
    let agg: Value = serde_json::from_str(&agg).unwrap();
    let sums: Vec<f64> = agg
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["value"].as_f64().unwrap())
        .collect();
    assert_eq!(sums, [24.5, 25.0, -1.25]);

    let (_, feeds) = f.get("/feeds");
    assert_eq!(serde_json::from_str::<Value>(&feeds).unwrap(), json!(["temp"]));
}

#[test]
fn rules_fire_once_per_crossing_over_http() {
    let f = Fixture::new();
    f.post("/feeds", KEY, json!({"feed_id": "volts"}));
    let (status, rule) = f.post(
        "/rules",
        KEY,
        json!({"feed_id": "volts", "comparison": "le", "threshold": 2.1, "target": "email"}),
    );
    assert_eq!(status, StatusCode::CREATED, "{rule}");
    for (t, v) in [
        (1_000, "3.30"),
        (2_000, "2.10"),
        (3_000, "2.05"),
        (4_000, "3.00"),
        (5_000, "2.00"),
    ] {
        f.set_time_ms(t);
        f.post("/events", KEY, json!({"feed_id": "volts", "value": v}));
    }
    let (_, text) = f.get("/notifications");
    assert!(text.contains(r#""created_at":2.000,"delivered_at":13.000"#), "{text}");
    let notes: Value = serde_json::from_str(&text).unwrap();
    let notes = notes.as_array().unwrap();
    assert_eq!(notes.len(), 2);
    assert_eq!(notes[0]["value"], "2.10");
    assert_eq!(notes[0]["channel"], "email_sim");
    assert_eq!(notes[1]["value"], "2.00");
}

#[test]
fn concurrent_clients_get_strictly_increasing_ids() {
    let f = Fixture::new();
    f.post("/feeds", KEY, json!({"feed_id": "load"}));
    let url = f.server.base_url();
    let workers: Vec<_> = (0..8)
        .map(|c| {
            let url = url.clone();
            std::thread::spawn(move || {
                let mut client = RemoteCloud::new(&url, KEY).unwrap();
                (0..100)
                    .map(|i| client.post("load", &format!("{c}.{i}"), Millis(0)).unwrap().entry_id)
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let per_client: Vec<Vec<u64>> = workers.into_iter().map(|w| w.join().unwrap()).collect();
    for ids in &per_client {
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }
    let stored = f.service.entries("load", TimeRange::all()).unwrap();
    assert_eq!(stored.len(), 800);
    assert!(stored.windows(2).all(|w| w[0].entry_id < w[1].entry_id));
    let mut all: Vec<u64> = per_client.concat();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), 800);
}

#[test]
fn simulation_posts_to_a_remote_service() {
    let f = Fixture::new();
    let cloud = RemoteCloud::new(&f.server.base_url(), KEY).unwrap();
    let mut sim = Simulation::new(Scenario::bundled_three_nodes(), cloud).unwrap();
    sim.run_until(SimTime::from_secs(7200.0));
    let report = sim.report();
    assert_eq!(report.counters.posts_succeeded, 24);
    assert_eq!(f.service.total_entries(), 24);
    assert_eq!(f.service.rules().len(), 3);

    let mut bad = RemoteCloud::new(&f.server.base_url(), "nope").unwrap();
    assert!(matches!(bad.ensure_feed("x"), Err(CloudError::Unauthorized(_))));
}

#[test]
fn unreachable_service_is_unavailable() {
    let f = Fixture::new();
    let url = f.server.base_url();
    f.server.stop().unwrap();
    let mut client = RemoteCloud::new(&url, KEY).unwrap();
    assert!(matches!(
        client.post("x", "1", Millis(0)),
        Err(CloudError::Unavailable(_))
    ));
}
