use std::path::PathBuf;
use std::process::{Command, Output};

fn wsn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsn"))
        .args(args)
        .env_remove("SENSE_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("wsn-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn frame_decode_breaks_down_fields() {
    let out = wsn(&["frame", "decode", "7E000100FF"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("frame_data=00"), "{text}");
    assert!(text.contains("checksum=FF ok"), "{text}");
}

#[test]
fn frame_decode_reports_checksum_mismatch() {
    let out = wsn(&["frame", "decode", "7E00010000"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("checksum-mismatch expected=FF found=00"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn frame_encode_inverts_decode() {
    for (data, flag) in [("92AB7E11", None), ("177D13", Some("--escaped"))] {
        let mut args = vec!["frame", "encode", data];
        args.extend(flag);
        let wire = stdout(&wsn(&args)).trim().to_string();
        let mut args = vec!["frame", "decode", wire.as_str()];
        args.extend(flag);
        let decoded = stdout(&wsn(&args));
        assert!(decoded.contains(&format!("frame_data={data}")), "{decoded}");
    }
}

#[test]
fn frame_rejects_bad_hex() {
    assert_eq!(wsn(&["frame", "encode", "zz"]).status.code(), Some(2));
}

#[test]
fn convert_subcommands() {
    let adc = stdout(&wsn(&["convert", "adc", "1023"]));
    assert!(adc.contains("millivolts=1200\n"), "{adc}");
    assert!(adc.contains("supply_volts=3.6\n"), "{adc}");
    assert_eq!(
        stdout(&wsn(&["convert", "divider", "--vin", "3.3"])).trim(),
        "volts=1.1"
    );
    assert_eq!(stdout(&wsn(&["convert", "supply", "3.3"])).trim(), "adc=938");
    assert_eq!(stdout(&wsn(&["convert", "celsius", "25"])).trim(), "adc=213");
    assert_ne!(wsn(&["convert", "adc", "1024"]).status.code(), Some(0));
}

#[test]
fn simulate_bundled_scenario() {
    let report = scratch("report.json");
    let trace = scratch("trace.csv");
    let out = wsn(&[
        "simulate",
        "--until",
        "7200",
        "--report",
        report.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["posts_succeeded"], 24);
    assert_eq!(json["posts"].as_array().unwrap().len(), 24);
    let trace = std::fs::read_to_string(&trace).unwrap();
    assert!(trace.starts_with("time,kind,node\n"));
    assert!(trace.contains(",poll,0013A200409C2679"));
}

#[test]
fn simulate_is_deterministic() {
    let a = wsn(&["simulate", "--until", "20000", "--seed", "9"]);
    let b = wsn(&["simulate", "--until", "20000", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = wsn(&["simulate", "--until", "20000", "--seed", "10"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn simulate_zero_length_is_empty() {
    let out = wsn(&["simulate", "--until", "0"]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["events_processed"], 0);
    assert!(json["readings"].as_array().unwrap().is_empty());
}

#[test]
fn simulate_config_errors_exit_2() {
    let out = wsn(&["simulate", "--scenario", "/no/such/scenario.toml"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = scratch("bad.toml");
    std::fs::write(&bad, "[[nodes]]\naddr64 = \"0013A200409C2679\"\nsleep_period = 0\n").unwrap();
    let out = wsn(&["simulate", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nodes[0].sleep_period"), "{}", stderr(&out));
}

#[test]
fn lifetime_single_cell_and_footer() {
    let out = wsn(&["lifetime", "--payloads", "2", "--periods", "1800"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "payload_bytes,update_period_s,avg_current_ma,lifetime_hours");
    assert!(lines[1].starts_with("2,1800.0,"), "{text}");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("# sleep-current bound: 3333.33 h"), "{text}");
}

#[test]
fn lifetime_defaults_are_monotone() {
    let path = scratch("sweep.csv");
    let out = wsn(&["lifetime", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let rows: Vec<(u32, f64, f64)> = text
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 101 * 25);
    for a in &rows {
        assert!(a.2 < 2000.0 / 0.6);
        for b in &rows {
            if a.1 == b.1 && a.0 < b.0 {
                assert!(a.2 > b.2);
            }
            if a.0 == b.0 && a.1 < b.1 {
                assert!(a.2 < b.2);
            }
        }
    }
}

#[test]
fn lifetime_rejects_empty_lists() {
    assert_eq!(wsn(&["lifetime", "--payloads", ""]).status.code(), Some(2));
    assert_eq!(wsn(&["lifetime", "--periods", "log:60:600:0"]).status.code(), Some(2));
}

#[test]
fn lifetime_reads_profile_files() {
    let path = scratch("profile.toml");
    std::fs::write(
        &path,
        "i_onoff = 8.1\ni_listen = 40.0\ni_trans = 38.0\ni_sleep = 0.3\ncapacity = 1000.0\nnominal_voltage = 9.0\n",
    )
    .unwrap();
    let out = wsn(&[
        "lifetime",
        "--profile",
        path.to_str().unwrap(),
        "--payloads",
        "2",
        "--periods",
        "60",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("# sleep-current bound: 3333.33 h"));
}

#[test]
fn alert_drill_constant_latency() {
    let out = wsn(&["alert-drill", "--trials", "3", "--latency", "constant:11"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = stdout(&out);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("attempt,latency_s,forced_at_s,created_at_s,delivered_at_s,end_to_end_s")
    );
    assert!(lines.all(|l| l.split(',').nth(1) == Some("11.0")), "{csv}");
    assert!(stderr(&out).contains("mean_latency_s=11.000"));
}

#[test]
fn alert_drill_uniform_bounds_and_file_output() {
    let path = scratch("drill.csv");
    let out = wsn(&["alert-drill", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("mean_latency_s="));
    let text = std::fs::read_to_string(&path).unwrap();
    let latencies: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(latencies.len(), 10);
    assert!(latencies.iter().all(|l| (8.0..=13.0).contains(l)), "{latencies:?}");
}

#[test]
fn alert_drill_zero_trials_is_usage_error() {
    assert_eq!(wsn(&["alert-drill", "--trials", "0"]).status.code(), Some(2));
}

#[test]
fn unknown_subcommand_fails() {
    assert_eq!(wsn(&["teleport"]).status.code(), Some(2));
}

#[cfg(unix)]
#[test]
fn serve_answers_and_snapshots_on_interrupt() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpStream;
    use std::process::Stdio;

    let snapshot = scratch("store.json");
    let _ = std::fs::remove_file(&snapshot);
    let mut child = Command::new(env!("CARGO_BIN_EXE_wsn"))
        .args([
            "serve",
            "--port",
            "0",
            "--feeds",
            "room,hall",
            "--snapshot",
            snapshot.to_str().unwrap(),
        ])
        .env("SENSE_KEY", "k")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut first)
        .unwrap();
    let addr = first
        .trim()
        .strip_prefix("listening on http://")
        .expect("banner")
        .to_string();

    let mut conn = TcpStream::connect(&addr).unwrap();
    write!(conn, "GET /feeds HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    conn.read_to_string(&mut response).unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.ends_with(r#"["hall","room"]"#), "{response}");

    let status = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(child.wait().unwrap().success());
    let saved = std::fs::read_to_string(&snapshot).unwrap();
    assert!(saved.contains("\"room\""), "{saved}");
}
