//! The `wrapify` command-line tool.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or bind
//! error.

pub mod bench;
pub mod files;

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::codec::{
    decode_audio, decode_image, encode_audio, encode_image, Codec, DecodeOptions, NativeValue, PayloadKind,
};
use crate::registry::{Registry, RegistryError};
use crate::schemes::{
    channel_method, forward_method, mirror_method, role_main, run_channel_scenario, run_forward_scenario,
    run_mirror_scenario, ScenarioOptions, SchemeError,
};
use crate::topic::{Carrier, Topic};
use crate::transport::{
    Bridge, Broker, BrokerAddrs, EndpointHandle, EndpointOptions, Runtime, RuntimeConfig, StopSignal, TransportError,
    Wait,
};
use bench::{run_bench, BenchError, BenchKind};
use files::FileError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Parser)]
#[command(name = "wrapify", version, about = "Publish, subscribe, bridge and benchmark messages across transports")]
pub struct Cli {
    /// Broker subscriber-side address; the publisher side is the next port.
    #[arg(long, global = true, env = "WRAPIFY_BROKER")]
    pub broker: Option<String>,
    /// Name registry file used to locate tcp repliers.
    #[arg(long, global = true, env = "WRAPIFY_REGISTRY")]
    pub registry: Option<PathBuf>,
    /// Mode config checked against the demo methods before a demo runs.
    #[arg(long, global = true, env = "WRAPIFY_MODES")]
    pub mode_config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Native,
    Image,
    Audio,
}

impl From<Kind> for BenchKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Native => BenchKind::Native,
            Kind::Image => BenchKind::Image,
            Kind::Audio => BenchKind::Audio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Mirror,
    Forward,
    Channel,
}

#[derive(Debug, Args)]
pub struct EndpointArgs {
    #[arg(long)]
    pub topic: String,
    #[arg(long, default_value = "tcp")]
    pub carrier: String,
    #[arg(long, value_enum, default_value = "native")]
    pub kind: Kind,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the tcp publish/subscribe broker.
    Broker {
        /// Where subscribers connect (default: --broker or 127.0.0.1:5555).
        #[arg(long)]
        sub_addr: Option<String>,
        /// Where publishers connect (default: the next port).
        #[arg(long)]
        pub_addr: Option<String>,
    },
    /// Publish JSON lines from stdin, or image/audio files.
    Pub {
        #[command(flatten)]
        endpoint: EndpointArgs,
        /// Image or audio files to publish; stdin when omitted.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Pause between records.
        #[arg(long, default_value_t = 0)]
        interval_ms: u64,
    },
    /// Print received records as JSON lines, or write image/audio files.
    Sub {
        #[command(flatten)]
        endpoint: EndpointArgs,
        /// Exit after this many records.
        #[arg(long)]
        count: Option<u64>,
        /// Output file for image/audio; `{index}` is replaced by the record index.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 1024)]
        queue_size: usize,
    },
    /// Send each JSON line of stdin as a request and print the reply.
    Req {
        #[arg(long)]
        topic: String,
        #[arg(long, default_value = "tcp")]
        carrier: String,
        /// Replier address, bypassing the name registry.
        #[arg(long)]
        address: Option<String>,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
    /// Echo every request back to its sender.
    Rep {
        #[arg(long)]
        topic: String,
        #[arg(long, default_value = "tcp")]
        carrier: String,
        /// Address to listen on instead of registering a free port.
        #[arg(long)]
        address: Option<String>,
        /// Exit after answering this many requests.
        #[arg(long)]
        count: Option<u64>,
    },
    /// Relay everything from one `carrier:topic` to another.
    Bridge {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Measure request/reply latency against an echo replier.
    Bench {
        #[arg(long, value_enum, default_value = "native")]
        kind: Kind,
        #[arg(long, default_value_t = 1024)]
        payload_bytes: usize,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value = "inproc")]
        carrier: String,
        #[arg(long, value_enum, default_value = "json")]
        out: OutFormat,
        /// Write the record here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a mirror, forward or channel scenario and print its report.
    Demo {
        #[arg(value_enum)]
        scenario: Scenario,
        #[arg(long, default_value = "tcp")]
        carrier: String,
        /// Mirror: number of listeners.
        #[arg(long, default_value_t = 2)]
        listeners: usize,
        /// Forward: number of hops, all on --carrier.
        #[arg(long, default_value_t = 2)]
        hops: usize,
        /// Forward: comma-separated carrier per hop, overriding --hops.
        #[arg(long, value_delimiter = ',')]
        via: Vec<String>,
        /// Channel: slot positions to make unavailable to the listener.
        #[arg(long)]
        disable: Vec<usize>,
        /// Payload for mirror and forward, as JSON.
        #[arg(long, default_value = r#"{"msg":"hello"}"#)]
        payload: String,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Run every role as a thread of this process.
        #[arg(long)]
        threads: bool,
    },
    /// List transports and their availability as JSON lines.
    Transports,
    /// Internal: run scenario roles described by a JSON spec.
    #[command(hide = true)]
    Role {
        #[arg(long)]
        spec: String,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Bind(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Bind(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_FAILURE,
        }
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::AddressInUse(_) => CliError::Bind(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SchemeError> for CliError {
    fn from(e: SchemeError) -> Self {
        match e {
            SchemeError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            SchemeError::Transport(t) => t.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            BenchError::Transport(t) => t.into(),
            BenchError::Codec(_) => CliError::Runtime(e.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(io::Error, FileError, crate::codec::CodecError);

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stop = StopSignal::new();
    {
        let stop = stop.clone();
        // Only one handler can be installed; a second call from tests is harmless.
        let _ = ctrlc::set_handler(move || stop.raise());
    }
    match run(cli, &stop) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn runtime_config(cli: &Cli) -> Result<RuntimeConfig, CliError> {
    let mut cfg = RuntimeConfig::default();
    if let Some(b) = &cli.broker {
        cfg.broker = BrokerAddrs::from_subscriber_side(b).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(r) = &cli.registry {
        cfg.registry_path = r.clone();
    }
    Ok(cfg)
}

fn topic(s: &str) -> Result<Topic, CliError> {
    Topic::new(s).map_err(|e| CliError::Usage(e.to_string()))
}

/// Splits `carrier:topic`, e.g. `tcp:/a`.
fn endpoint_spec(s: &str) -> Result<(Carrier, Topic), CliError> {
    let (c, t) = s
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("expected carrier:topic, got {s:?}")))?;
    Ok((Carrier::from(c), topic(t)?))
}

pub fn run(cli: Cli, stop: &StopSignal) -> Result<i32, CliError> {
    let cfg = runtime_config(&cli)?;
    match cli.command {
        Command::Broker { sub_addr, pub_addr } => {
            let mut addrs = cfg.broker.clone();
            if let Some(s) = sub_addr {
                addrs = BrokerAddrs::from_subscriber_side(&s).map_err(|e| CliError::Usage(e.to_string()))?;
            }
            if let Some(p) = pub_addr {
                addrs.publisher_addr = p;
            }
            let broker = Broker::bind(&addrs)?;
            let bound = broker.local_addrs();
            eprintln!(
                "broker listening: subscribers on {}, publishers on {}",
                bound.subscriber_addr, bound.publisher_addr
            );
            broker.run(stop)?;
            Ok(EXIT_OK)
        }
        Command::Pub {
            endpoint,
            inputs,
            interval_ms,
        } => cmd_pub(&Runtime::new(cfg), &endpoint, &inputs, Duration::from_millis(interval_ms)),
        Command::Sub {
            endpoint,
            count,
            output,
            queue_size,
        } => cmd_sub(&Runtime::new(cfg), &endpoint, count, output.as_ref(), queue_size, stop),
        Command::Req {
            topic: t,
            carrier,
            address,
            timeout_ms,
        } => {
            let mut opts = EndpointOptions::default();
            if let Some(a) = address {
                opts = opts.with_address(a);
            }
            let rt = Runtime::new(RuntimeConfig { tcp_direct: true, ..cfg });
            let ep = rt.open_requester(&topic(&t)?, &Carrier::from(carrier.as_str()), &opts)?;
            cmd_req(ep, Duration::from_millis(timeout_ms))
        }
        Command::Rep {
            topic: t,
            carrier,
            address,
            count,
        } => {
            let mut opts = EndpointOptions::default();
            if let Some(a) = address {
                opts = opts.with_address(a);
            }
            let rt = Runtime::new(RuntimeConfig { tcp_direct: true, ..cfg });
            let ep = rt.open_replier(&topic(&t)?, &Carrier::from(carrier.as_str()), &opts)?;
            eprintln!("replying on {t}");
            cmd_rep(ep, count, stop)
        }
        Command::Bridge { from, to } => {
            let (from, to) = (endpoint_spec(&from)?, endpoint_spec(&to)?);
            let rt = Runtime::new(cfg);
            let mut bridge = Bridge::open(&rt, (&from.1, &from.0), (&to.1, &to.0), &EndpointOptions::default())?;
            eprintln!("bridging {}:{} -> {}:{}", from.0, from.1, to.0, to.1);
            bridge.run(stop)?;
            eprintln!("forwarded {} envelopes", bridge.forwarded());
            Ok(EXIT_OK)
        }
        Command::Bench {
            kind,
            payload_bytes,
            count,
            carrier,
            out,
            output,
        } => {
            let record = run_bench(kind.into(), payload_bytes, count, &Carrier::from(carrier.as_str()))?;
            let text = match out {
                OutFormat::Json => format!("{}\n", serde_json::to_string(&record).expect("record serializes")),
                OutFormat::Csv => record.to_csv(),
            };
            match output {
                Some(path) => std::fs::write(path, text)?,
                None => io::stdout().write_all(text.as_bytes())?,
            }
            Ok(EXIT_OK)
        }
        Command::Demo {
            scenario,
            carrier,
            listeners,
            hops,
            via,
            disable,
            payload,
            timeout_secs,
            seed,
            threads,
        } => {
            if let Some(path) = &cli.mode_config {
                check_mode_config(path)?;
            }
            let opts = ScenarioOptions {
                exe: if threads { None } else { Some(std::env::current_exe()?) },
                timeout: Duration::from_secs(timeout_secs),
                seed,
            };
            let carrier = Carrier::from(carrier.as_str());
            let payload = Codec::new()
                .decode_native(payload.as_bytes(), &DecodeOptions::default())
                .map_err(|e| CliError::Usage(format!("--payload: {e}")))?;
            let report = match scenario {
                Scenario::Mirror => run_mirror_scenario(listeners, &carrier, &payload, &opts)?,
                Scenario::Forward => {
                    let carriers: Vec<Carrier> = if via.is_empty() {
                        vec![carrier; hops]
                    } else {
                        via.iter().map(|c| Carrier::from(c.as_str())).collect()
                    };
                    let hops: Vec<(Topic, Carrier)> = carriers
                        .into_iter()
                        .enumerate()
                        .map(|(i, c)| (topic(&format!("/example/hop_{}", i + 1)).expect("valid topic"), c))
                        .collect();
                    run_forward_scenario(&hops, &payload, &opts)?
                }
                Scenario::Channel => run_channel_scenario(&disable, &carrier, &opts)?,
            };
            println!("{}", report.to_json());
            Ok(if report.passed { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::Transports => {
            let rt = Runtime::new(cfg);
            let mut out = io::stdout().lock();
            for cap in rt.list_transports() {
                writeln!(out, "{}", serde_json::to_string(&cap).expect("capability serializes"))?;
            }
            Ok(EXIT_OK)
        }
        Command::Role { spec } => Ok(role_main(&spec)),
    }
}

/// Fails when the mode file names a method or mode the demos do not have.
fn check_mode_config(path: &PathBuf) -> Result<(), CliError> {
    let registry = Registry::new(Runtime::default());
    registry.register(mirror_method(NativeValue::Null))?;
    registry.register(forward_method())?;
    registry.register(channel_method(0))?;
    registry.load_mode_config(path)?;
    Ok(())
}

fn cmd_pub(rt: &Runtime, args: &EndpointArgs, inputs: &[PathBuf], interval: Duration) -> Result<i32, CliError> {
    let t = topic(&args.topic)?;
    let mut ep = rt.open_publisher(&t, &Carrier::from(args.carrier.as_str()), &EndpointOptions::default())?;
    let codec = Codec::new();
    let mut first = true;
    let mut pause = || {
        if !first && !interval.is_zero() {
            std::thread::sleep(interval);
        }
        first = false;
    };
    if args.kind == Kind::Native {
        for (n, line) in io::stdin().lock().lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match codec.decode_native(line.as_bytes(), &DecodeOptions::default()) {
                Ok(value) => {
                    pause();
                    ep.publish(&codec.encode_native_envelope(&value, &t)?)?;
                }
                Err(e) => eprintln!("warning: skipping line {}: {e}", n + 1),
            }
        }
        return Ok(EXIT_OK);
    }
    let blobs: Vec<Vec<u8>> = if inputs.is_empty() {
        let mut buf = Vec::new();
        io::Read::read_to_end(&mut io::stdin().lock(), &mut buf)?;
        vec![buf]
    } else {
        inputs.iter().map(std::fs::read).collect::<Result<_, _>>()?
    };
    for blob in blobs {
        let env = match args.kind {
            Kind::Image => encode_image(&files::read_image(&blob)?, &t)?,
            Kind::Audio => encode_audio(&files::read_audio(&blob)?, &t)?,
            Kind::Native => unreachable!("handled above"),
        };
        pause();
        ep.publish(&env)?;
    }
    Ok(EXIT_OK)
}

fn output_path(template: &Path, n: u64) -> PathBuf {
    let s = template.to_string_lossy();
    if s.contains("{index}") {
        PathBuf::from(s.replace("{index}", &n.to_string()))
    } else {
        template.to_path_buf()
    }
}

fn cmd_sub(
    rt: &Runtime,
    args: &EndpointArgs,
    count: Option<u64>,
    output: Option<&PathBuf>,
    queue_size: usize,
    stop: &StopSignal,
) -> Result<i32, CliError> {
    let t = topic(&args.topic)?;
    let carrier = Carrier::from(args.carrier.as_str());
    if args.kind != Kind::Native && output.is_none() {
        return Err(CliError::Usage("--output is required for image and audio".into()));
    }
    let opts = EndpointOptions::default().with_queue_size(queue_size);
    let mut ep = rt.open_subscriber(&t, &carrier, &opts)?;
    eprintln!("subscribed to {t} on {carrier}");
    let codec = Codec::new();
    let mut received = 0u64;
    while !stop.is_raised() && count.is_none_or(|c| received < c) {
        let env = match ep.try_receive(true, Some(POLL)) {
            Ok(Some(env)) => env,
            Ok(None) | Err(TransportError::TimedOut) => continue,
            Err(e) => return Err(e.into()),
        };
        let result: Result<(), CliError> = match (args.kind, env.kind()) {
            (Kind::Native, PayloadKind::Native) => {
                let value = codec.decode_native_envelope(&env, &DecodeOptions::default())?;
                let text = String::from_utf8(codec.encode_native(&value)?).expect("native text is utf-8");
                let mut out = io::stdout().lock();
                writeln!(out, "{text}")?;
                out.flush()?;
                Ok(())
            }
            (Kind::Image, PayloadKind::Image) => {
                let mut f = std::fs::File::create(output_path(output.expect("checked"), received))?;
                files::write_image(&mut f, &decode_image(&env)?).map_err(Into::into)
            }
            (Kind::Audio, PayloadKind::Audio) => {
                let mut f = std::fs::File::create(output_path(output.expect("checked"), received))?;
                files::write_audio(&mut f, &decode_audio(&env)?).map_err(Into::into)
            }
            (_, other) => {
                eprintln!("warning: skipping {} envelope", other.name());
                continue;
            }
        };
        result?;
        received += 1;
    }
    Ok(EXIT_OK)
}

fn cmd_req(mut ep: EndpointHandle, timeout: Duration) -> Result<i32, CliError> {
    let codec = Codec::new();
    let t = ep.topic().clone();
    let mut code = EXIT_OK;
    for (n, line) in io::stdin().lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = match codec.decode_native(line.as_bytes(), &DecodeOptions::default()) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("warning: skipping line {}: {e}", n + 1);
                continue;
            }
        };
        match ep.request(&codec.encode_native_envelope(&value, &t)?, Some(timeout)) {
            Ok(reply) => {
                let v = codec.decode_native_envelope(&reply, &DecodeOptions::default())?;
                let text = String::from_utf8(codec.encode_native(&v)?).expect("native text is utf-8");
                println!("{text}");
            }
            Err(e @ TransportError::RemoteFailure(_)) => {
                eprintln!("error: {e}");
                code = EXIT_FAILURE;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(code)
}

fn cmd_rep(mut ep: EndpointHandle, count: Option<u64>, stop: &StopSignal) -> Result<i32, CliError> {
    let codec = Codec::new();
    let mut served = 0u64;
    while !stop.is_raised() && count.is_none_or(|c| served < c) {
        let Some(req) = ep.next_request(Wait::Until(Instant::now() + POLL))? else {
            continue;
        };
        let env = req.envelope().clone();
        if env.kind() == PayloadKind::Native {
            if let Ok(v) = codec.decode_native_envelope(&env, &DecodeOptions::default()) {
                println!("{}", String::from_utf8_lossy(&codec.encode_native(&v)?));
            }
        }
        req.respond(env);
        served += 1;
    }
    Ok(EXIT_OK)
}
