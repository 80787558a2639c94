use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use wsn_core::cloud::client::{LocalCloud, RemoteCloud};
use wsn_core::cloud::drill::{measure_alert_latency, write_drill_csv, DrillConfig, DrillError};
use wsn_core::cloud::http::{serve_until_interrupt, wall_clock};
use wsn_core::cloud::{CloudConfig, FeedService, LatencyDistribution, Snapshot};
use wsn_core::frame_codec::{decode_frame, encode_frame, parse_io_sample, ApiFrame, EscapeMode};
use wsn_core::netsim::{write_trace_csv, ConfigError, Scenario, SimError, SimReport, SimTime, Simulation, SIM_KEY};
use wsn_core::power::{lifetime_sweep, write_sweep_csv, DutyCycleSpec, PowerProfile};
use wsn_core::units::{
    adc_to_celsius, adc_to_millivolts, adc_to_supply_volts, celsius_to_adc, divider_output, supply_volts_to_adc,
    AdcReading, DividerConfig,
};

/// Failures that exit with status 2 instead of 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "wsn", version, about = "Sensor network to cloud testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario through the discrete-event simulator.
    Simulate(SimulateArgs),
    /// Serve the feed service over HTTP until interrupted.
    Serve(ServeArgs),
    /// Encode or decode API frames given as hex.
    #[command(subcommand)]
    Frame(FrameCommand),
    /// Sensor unit conversions.
    #[command(subcommand)]
    Convert(ConvertCommand),
    /// Battery lifetime sweep over payload sizes and update periods.
    Lifetime(LifetimeArgs),
    /// Measure alert notification latency end to end in simulation.
    AlertDrill(DrillArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML; the bundled three-node scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Virtual seconds to simulate.
    #[arg(long, default_value_t = 7200.0)]
    until: f64,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report JSON destination; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Event trace CSV destination.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Post to a running feed service instead of an in-process one.
    #[arg(long)]
    cloud: Option<String>,
    #[arg(long, env = "SENSE_KEY", hide_env_values = true)]
    key: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "SENSE_KEY", hide_env_values = true)]
    key: String,
    /// Feeds to create at startup.
    #[arg(long, value_delimiter = ',')]
    feeds: Vec<String>,
    /// Notification delivery delay: constant:S or uniform:LOW:HIGH.
    #[arg(long, default_value = "uniform:8:13")]
    latency: LatencyDistribution,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Store image loaded at startup if present and written on shutdown.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Subcommand)]
enum FrameCommand {
    /// Frame data (hex) to a complete wire frame (hex).
    Encode {
        hex: String,
        #[arg(long)]
        escaped: bool,
    },
    /// Wire frame (hex) to a field breakdown.
    Decode {
        hex: String,
        #[arg(long)]
        escaped: bool,
    },
}

#[derive(Subcommand)]
enum ConvertCommand {
    /// ADC count to millivolts, °C and supply volts.
    Adc { raw: u16 },
    /// Temperature to the ADC count the sensor would produce.
    Celsius { celsius: f64 },
    /// Supply voltage to the ADC count read through the divider.
    Supply { volts: f64 },
    /// Output of a resistive divider.
    Divider {
        #[arg(long)]
        vin: f64,
        #[arg(long, default_value_t = 200.0)]
        r1: f64,
        #[arg(long, default_value_t = 100.0)]
        r2: f64,
    },
}

#[derive(Args)]
struct LifetimeArgs {
    /// Power profile TOML; the measured defaults when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Payload sizes in bytes: comma list, ranges as A..B.
    #[arg(long, default_value = "2..102")]
    payloads: String,
    /// Update periods in seconds: comma list, or log:FROM:TO:COUNT.
    #[arg(long, default_value = "log:60:86400:25")]
    periods: String,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DrillArgs {
    #[arg(long, default_value_t = 10)]
    trials: u32,
    #[arg(long, default_value = "uniform:8:13")]
    latency: LatencyDistribution,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage_like = e.downcast_ref::<UsageError>().is_some()
                || e.downcast_ref::<ConfigError>().is_some()
                || matches!(e.downcast_ref::<SimError>(), Some(SimError::Config(_)));
            ExitCode::from(if usage_like { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::Serve(args) => serve(args),
        Command::Frame(cmd) => frame(cmd),
        Command::Convert(cmd) => convert(cmd),
        Command::Lifetime(args) => lifetime(args),
        Command::AlertDrill(args) => alert_drill(args),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut scenario = match &args.scenario {
        Some(path) => Scenario::from_file(path)?,
        None => Scenario::bundled_three_nodes(),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if !(args.until.is_finite() && args.until >= 0.0) {
        return Err(usage(format!(
            "--until must be a non-negative number, got {}",
            args.until
        )));
    }
    let until = SimTime::from_secs(args.until);
    let (report, trace) = match &args.cloud {
        Some(url) => {
            let key = args
                .key
                .as_deref()
                .ok_or_else(|| usage("--cloud needs an API key (--key or SENSE_KEY)"))?;
            let mut sim = Simulation::new(scenario, RemoteCloud::new(url, key)?)?;
            sim.run_until(until);
            (sim.report(), sim.trace().to_vec())
        }
        None => {
            let service = FeedService::shared(CloudConfig {
                latency: scenario.alerts.latency,
                seed: scenario.seed,
            });
            let key = args.key.as_deref().unwrap_or(SIM_KEY);
            service.register_key(key, "simulator");
            let mut sim = Simulation::new(scenario, LocalCloud::new(service, key))?;
            sim.run_until(until);
            (sim.report(), sim.trace().to_vec())
        }
    };
    write_report(&report, args.report.as_deref())?;
    if let Some(path) = &args.trace {
        write_trace_csv(&trace, output(Some(path))?)?;
    }
    let c = &report.counters;
    eprintln!(
        "simulated {:.0} s: {} readings, {}/{} posts stored, {} notifications",
        report.until_s,
        c.readings_produced,
        c.posts_succeeded,
        c.posts_attempted,
        report.notifications.len()
    );
    Ok(())
}

fn write_report(report: &SimReport, path: Option<&Path>) -> Result<()> {
    let mut out = output(path)?;
    out.write_all(report.to_json().as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let config = CloudConfig {
        latency: args.latency,
        seed: args.seed,
    };
    let service = match &args.snapshot {
        Some(path) if path.exists() => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let snapshot: Snapshot =
                serde_json::from_str(&text).with_context(|| format!("bad snapshot {}", path.display()))?;
            Arc::new(FeedService::restore(snapshot, config))
        }
        _ => FeedService::shared(config),
    };
    service.register_key(&args.key, "cli");
    for feed in &args.feeds {
        service.create_feed(&args.key, feed)?;
    }
    let addr = SocketAddr::new(args.bind, args.port);
    serve_until_interrupt(service.clone(), wall_clock(), addr, |bound| {
        println!("listening on http://{bound}");
        let _ = io::stdout().flush();
    })
    .with_context(|| format!("cannot serve on {addr}"))?;
    if let Some(path) = &args.snapshot {
        let text = serde_json::to_string_pretty(&service.snapshot())?;
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
        eprintln!("snapshot written to {}", path.display());
    }
    Ok(())
}

fn parse_hex(text: &str) -> Result<Vec<u8>> {
    let cleaned: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    hex::decode(&cleaned).map_err(|e| usage(format!("invalid hex {text:?}: {e}")))
}

fn frame(cmd: FrameCommand) -> Result<()> {
    match cmd {
        FrameCommand::Encode { hex, escaped } => {
            let frame = ApiFrame::new(parse_hex(&hex)?)?;
            println!(
                "{}",
                hex::encode_upper(encode_frame(&frame, EscapeMode::from_flag(escaped)))
            );
        }
        FrameCommand::Decode { hex, escaped } => {
            let frame = decode_frame(&parse_hex(&hex)?, EscapeMode::from_flag(escaped))?;
            println!("frame_type={:02X}", frame.frame_type());
            println!("length={}", frame.length());
            println!("frame_data={}", hex::encode_upper(frame.frame_data()));
            println!("checksum={:02X} ok", frame.checksum());
            if let Ok(sample) = parse_io_sample(frame.frame_data()) {
                println!("source_addr64={:016X}", sample.source_addr64);
                println!("source_addr16={:04X}", sample.source_addr16);
                for (k, v) in (0..8u8).filter_map(|k| sample.channel(k).map(|v| (k, v))) {
                    println!("AD{k}={v}");
                }
            }
        }
    }
    Ok(())
}

fn convert(cmd: ConvertCommand) -> Result<()> {
    match cmd {
        ConvertCommand::Adc { raw } => {
            let r = AdcReading::new(raw)?;
            println!("millivolts={}", adc_to_millivolts(r));
            println!("celsius={}", adc_to_celsius(r));
            println!("supply_volts={}", adc_to_supply_volts(r));
        }
        ConvertCommand::Celsius { celsius } => println!("adc={}", celsius_to_adc(celsius)?.raw()),
        ConvertCommand::Supply { volts } => println!("adc={}", supply_volts_to_adc(volts)?.raw()),
        ConvertCommand::Divider { vin, r1, r2 } => {
            println!("volts={}", divider_output(&DividerConfig { r1, r2, vin })?)
        }
    }
    Ok(())
}

fn parse_payloads(text: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let num = |s: &str| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| usage(format!("bad payload size {s:?}")))
        };
        match item.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(usage(format!("empty payload range {item}")));
                }
                out.extend(a..=b);
            }
            None => out.push(num(item)?),
        }
    }
    if out.is_empty() {
        return Err(usage("--payloads is empty"));
    }
    Ok(out)
}

fn parse_periods(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v > 0.0)
            .ok_or_else(|| usage(format!("bad period {s:?}")))
    };
    if let Some(spec) = text.strip_prefix("log:") {
        let parts: Vec<&str> = spec.split(':').collect();
        let [from, to, count] = parts.as_slice() else {
            return Err(usage("log periods take log:FROM:TO:COUNT"));
        };
        let (from, to) = (num(from)?, num(to)?);
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad count {count:?}")))?;
        return Ok(match count {
            0 => return Err(usage("--periods is empty")),
            1 => vec![from],
            n => (0..n)
                .map(|k| from * (to / from).powf(k as f64 / (n - 1) as f64))
                .collect(),
        });
    }
    let out = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(num)
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(usage("--periods is empty"));
    }
    Ok(out)
}

fn lifetime(args: LifetimeArgs) -> Result<()> {
    let profile = match &args.profile {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            toml::from_str::<PowerProfile>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => PowerProfile::default(),
    };
    let payloads = parse_payloads(&args.payloads)?;
    let periods = parse_periods(&args.periods)?;
    let rows =
        lifetime_sweep(&profile, &DutyCycleSpec::default(), &payloads, &periods).map_err(|e| usage(e.to_string()))?;
    let mut out = output(args.out.as_deref())?;
    write_sweep_csv(&rows, &mut out)?;
    writeln!(
        out,
        "# sleep-current bound: {:.2} h (capacity {} mAh / i_sleep {} mA)",
        profile.sleep_bound_hours(),
        profile.capacity,
        profile.i_sleep
    )?;
    out.flush()?;
    Ok(())
}

fn alert_drill(args: DrillArgs) -> Result<()> {
    let config = DrillConfig {
        latency: args.latency,
        seed: args.seed,
        ..DrillConfig::default()
    };
    let result = match measure_alert_latency(args.trials, &config) {
        Err(DrillError::NoTrials) => return Err(usage("--trials must be at least 1")),
        other => other?,
    };
    let mut out = output(args.out.as_deref())?;
    write_drill_csv(&result, &mut out)?;
    out.flush()?;
    drop(out);
    if args.out.is_some() {
        for t in &result.trials {
            println!("attempt {:>2}: {:.3} s", t.attempt, t.latency_s);
        }
        println!("mean_latency_s={:.3}", result.mean_latency_s);
    } else {
        eprintln!("mean_latency_s={:.3}", result.mean_latency_s);
    }
    Ok(())
}
