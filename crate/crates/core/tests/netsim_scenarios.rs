use std::sync::mpsc;

use wsn_core::cloud::client::LocalCloud;
use wsn_core::cloud::{CloudConfig, FeedService, TimeRange};
use wsn_core::netsim::config::{Outage, SampleMode, SupplyFault};
use wsn_core::netsim::coordinator::{feed_id, TEMPERATURE_FEED, VOLTAGE_FEED};
use wsn_core::netsim::{
    run, run_local, run_with_progress, Scenario, SimReport, SimTime, Simulation, TraceRecord, SIM_KEY,
};

fn bundled() -> Scenario {
    Scenario::bundled_three_nodes()
}

fn simulate_with_trace(scenario: Scenario, until_s: f64) -> (SimReport, Vec<TraceRecord>) {
    let service = FeedService::shared(CloudConfig::default());
    service.register_key(SIM_KEY, "test");
    let mut sim = Simulation::new(scenario, LocalCloud::new(service, SIM_KEY)).unwrap();
    sim.run_until(SimTime::from_secs(until_s));
    (sim.report(), sim.trace().to_vec())
}

#[test]
fn bundled_scenario_stores_24_entries() {
    let (report, service) = run_local(&bundled(), 7200.0).unwrap();
    assert_eq!(service.total_entries(), 24);
    assert_eq!(report.counters.posts_succeeded, 24);
    assert_eq!(report.counters.posts_failed, 0);
    assert_eq!(report.counters.poll_timeouts, 0);
    for node in &bundled().nodes {
        for feed in [TEMPERATURE_FEED, VOLTAGE_FEED] {
            let entries = service
                .entries(&feed_id(feed, node.addr64.0), TimeRange::all())
                .unwrap();
            assert_eq!(entries.len(), 4, "{feed} {}", node.addr64);
        }
    }
    // full battery reads back as 3.3 V to within one ADC step
    let volts = service
        .latest(&feed_id(VOLTAGE_FEED, bundled().nodes[0].addr64.0))
        .unwrap()
        .unwrap();
    assert!((volts.numeric_value() - 3.3).abs() <= 3.6 / 1023.0);
}

#[test]
fn zero_length_run_is_empty() {
    let report = run(&bundled(), 0.0).unwrap();
    assert!(report.is_empty());
    assert_eq!(report.counters.events_processed, 0);
    assert!(report.nodes.iter().all(|n| n.charge_remaining_mah == 2000.0));
}

#[test]
fn polling_is_strictly_sequential() {
    let mut scenario = bundled();
    scenario.nodes[1].battery_mah = Some(0.0);
    scenario.link.drop_prob = 0.1;
    let (_, trace) = simulate_with_trace(scenario, 20_000.0);
    let mut outstanding = None;
    let mut polls = 0;
    for r in &trace {
        match r.kind.as_str() {
            "poll" => {
                assert!(
                    outstanding.is_none(),
                    "poll at {} while {:?} pending",
                    r.time,
                    outstanding
                );
                outstanding = r.node;
                polls += 1;
            }
            "response" | "poll_timeout" => {
                assert_eq!(r.node, outstanding, "{} at {} for a node not polled", r.kind, r.time);
                outstanding = None;
            }
            _ => {}
        }
    }
    assert!(polls > 20);
}

#[test]
fn depleted_node_times_out_and_others_report() {
    let mut scenario = bundled();
    scenario.nodes[2].battery_mah = Some(0.0);
    let report = run(&scenario, 7200.0).unwrap();
    assert!(report.nodes[2].depleted);
    assert_eq!(report.nodes[2].frames_sent, 0);
    assert_eq!(report.counters.poll_timeouts, 4);
    assert_eq!(report.counters.resets, 0, "node silence must not reset the coordinator");
    assert_eq!(report.counters.posts_succeeded, 16);
}

#[test]
fn battery_drains_monotonically() {
    let scenario = bundled();
    let mut last = vec![f64::INFINITY; scenario.nodes.len()];
    for until in [0.0, 10.0, 100.0, 1000.0, 5000.0, 20_000.0] {
        let report = run(&scenario, until).unwrap();
        for (node, prev) in report.nodes.iter().zip(last.iter_mut()) {
            assert!(node.charge_remaining_mah <= *prev);
            *prev = node.charge_remaining_mah;
        }
    }
    assert!(last.iter().all(|c| *c < 2000.0));
}

#[test]
fn injected_corruption_is_always_caught() {
    let mut scenario = bundled();
    scenario.link.corrupt_prob = 0.3;
    let report = run(&scenario, 50_000.0).unwrap();
    let c = &report.counters;
    assert!(c.corruptions_injected > 5);
    assert_eq!(c.corrupted_frames, c.corruptions_injected);
    // every reading came from an intact frame and so carries an in-range value
    for r in &report.readings {
        if r.feed == TEMPERATURE_FEED {
            assert!((20.0..=28.0).contains(&r.value), "{r:?}");
        }
    }
}

#[test]
fn outage_triggers_reset_then_recovers() {
    let mut scenario = bundled();
    scenario.faults.outages = vec![Outage {
        from_s: 1000.0,
        to_s: 4000.0,
    }];
    let (report, service) = run_local(&scenario, 9000.0).unwrap();
    let c = &report.counters;
    assert_eq!(c.resets, 1);
    assert_eq!(c.posts_failed, 3);
    // three failed posts plus the three left in the batch
    assert_eq!(c.lost_readings, 6);
    assert!(c.skipped_poll_cycles >= 1);
    assert_eq!(service.total_entries() as u64, c.posts_succeeded);
    let last_post = report.posts.last().unwrap();
    assert!(last_post.t > 4000.0 && last_post.error.is_none());
}

#[test]
fn latched_node_drops_out_until_reset() {
    let mut scenario = bundled();
    let node = scenario.nodes[0].addr64;
    scenario.faults.supply = vec![
        SupplyFault {
            node,
            at_s: 100.0,
            volts: Some(2.0),
        },
        SupplyFault {
            node,
            at_s: 2000.0,
            volts: None,
        },
    ];
    let report = run(&scenario, 7200.0).unwrap();
    assert!(report.nodes[0].low_voltage_latched);
    // only the cycle at t=0 got through
    assert_eq!(report.nodes[0].readings, 2);
    // the cycle at 7200 s spends its first 30 s timing out on the latched node
    assert_eq!(report.nodes[1].readings, 8);

    scenario.faults.node_resets = vec![wsn_core::netsim::config::NodeReset { node, at_s: 2500.0 }];
    let report = run(&scenario, 7200.0).unwrap();
    assert!(!report.nodes[0].low_voltage_latched);
    assert!(report.nodes[0].readings > 2);
}

#[test]
fn autonomous_mode_reports_every_wake() {
    let mut scenario = bundled();
    scenario.coordinator.mode = SampleMode::Autonomous;
    let report = run(&scenario, 200.0).unwrap();
    assert_eq!(report.counters.poll_requests, 0);
    // 20 s sleep period: ten wakes per node in 200 s, two readings each
    assert_eq!(report.counters.readings_produced, 3 * 10 * 2);
}

#[test]
fn identical_inputs_give_identical_reports() {
    let mut scenario = bundled();
    scenario.link.drop_prob = 0.2;
    scenario.sensors.adc_jitter_lsb = 3;
    let a = run(&scenario, 30_000.0).unwrap().to_json();
    assert_eq!(a, run(&scenario, 30_000.0).unwrap().to_json());
    scenario.seed += 1;
    assert_ne!(a, run(&scenario, 30_000.0).unwrap().to_json());
}

#[test]
fn report_json_roundtrips() {
    let mut scenario = bundled();
    scenario.faults.supply = vec![SupplyFault {
        node: scenario.nodes[0].addr64,
        at_s: 10.0,
        volts: Some(2.1),
    }];
    let report = run(&scenario, 7200.0).unwrap();
    assert_eq!(report.notifications.len(), 1);
    let back = SimReport::from_json(&report.to_json()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn progress_is_streamed() {
    let (tx, rx) = mpsc::channel();
    let report = run_with_progress(&bundled(), 50_000.0, tx).unwrap();
    let updates: Vec<_> = rx.iter().collect();
    let last = updates.last().unwrap();
    assert_eq!(last.events_processed, report.counters.events_processed);
    assert_eq!(last.until_s, 50_000.0);
    assert!(updates
        .windows(2)
        .all(|w| w[0].events_processed <= w[1].events_processed));
}

#[test]
fn scenario_files_with_trace_environment() {
    let dir = std::env::temp_dir().join(format!("wsn-scenario-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("room.csv"), "time,celsius\n0,20\n3600,30\n").unwrap();
    std::fs::write(
        dir.join("room.toml"),
        r#"
seed = 5
[environment]
model = "trace"
path = "room.csv"
[[nodes]]
addr64 = "0013A200409C2679"
wake_phase_s = 1.0
"#,
    )
    .unwrap();
    let scenario = Scenario::from_file(&dir.join("room.toml")).unwrap();
    let report = run(&scenario, 7200.0).unwrap();
    let temps: Vec<f64> = report
        .readings
        .iter()
        .filter(|r| r.feed == TEMPERATURE_FEED)
        .map(|r| r.value)
        .collect();
    assert!(temps.len() >= 3);
    assert!((temps[0] - 20.0).abs() < 0.2, "{temps:?}");
    assert!(temps.windows(2).all(|w| w[1] >= w[0]), "{temps:?}");
    assert!((temps.last().unwrap() - 30.0).abs() < 0.2, "{temps:?}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_errors_name_the_field() {
    let err =
        Scenario::from_toml_str("[[nodes]]\naddr64 = \"0013A200409C2679\"\nsleep_period = -1\n", None).unwrap_err();
    assert!(err.to_string().contains("nodes[0].sleep_period"), "{err}");
    let err = Scenario::from_toml_str("[link]\nlatency_ms = \"fast\"\n", None).unwrap_err();
    assert!(err.path.starts_with("link.latency_ms"), "{err}");
    let err = Scenario::from_file(std::path::Path::new("/definitely/not/here.toml")).unwrap_err();
    assert!(err.to_string().starts_with("config error at"), "{err}");
}
