//! Request/reply latency benchmark against an in-process echo replier.
//!
//! One-way latency is estimated as half of each round trip, so no clock
//! synchronisation is needed. The first [`WARMUP`] samples pay for
//! connection setup and are kept in the record but left out of the stats.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{encode_audio, encode_image, AudioChunk, Codec, CodecError, ImageFrame, MessageEnvelope, NativeValue};
use crate::topic::{Carrier, Topic};
use crate::transport::{EndpointOptions, Runtime, RuntimeConfig, StopSignal, TransportError};

pub const WARMUP: usize = 5;
pub const MIN_COUNT: usize = 10;
pub const ROUND_TRIP_LIMIT: Duration = Duration::from_secs(5);
pub const CSV_HEADER: &str = "payload_kind,payload_bytes,transport,count,p50_us,p95_us,p99_us,mean_us";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchKind {
    Native,
    Image,
    Audio,
}

impl BenchKind {
    pub fn name(self) -> &'static str {
        match self {
            BenchKind::Native => "native",
            BenchKind::Image => "image",
            BenchKind::Audio => "audio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub p50_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
    pub mean_us: f64,
}

impl BenchStats {
    /// Nearest-rank percentiles over `samples`, which must be non-empty.
    pub fn from_samples(samples: &[u64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let rank = |p: f64| {
            let idx = (p / 100.0 * sorted.len() as f64).ceil() as usize;
            sorted[idx.clamp(1, sorted.len()) - 1]
        };
        BenchStats {
            p50_us: rank(50.0),
            p95_us: rank(95.0),
            p99_us: rank(99.0),
            mean_us: sorted.iter().sum::<u64>() as f64 / sorted.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub payload_kind: BenchKind,
    pub payload_bytes: usize,
    pub transport: String,
    pub count: usize,
    /// Every one-way estimate, warm-up included.
    pub latencies_us: Vec<u64>,
    pub stats: BenchStats,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.1}",
            self.payload_kind.name(),
            self.payload_bytes,
            self.transport,
            self.count,
            self.stats.p50_us,
            self.stats.p95_us,
            self.stats.p99_us,
            self.stats.mean_us
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }
}

/// Smallest-perimeter width × height for `pixels`.
fn near_square(pixels: usize) -> (u32, u32) {
    let mut w = (pixels as f64).sqrt() as usize;
    while w > 1 && !pixels.is_multiple_of(w) {
        w -= 1;
    }
    let w = w.max(1);
    (w as u32, (pixels / w) as u32)
}

/// Builds a request envelope whose payload is `bytes` long (for native,
/// the string content is).
pub fn bench_envelope(kind: BenchKind, bytes: usize, topic: &Topic) -> Result<MessageEnvelope, BenchError> {
    if bytes == 0 {
        return Err(BenchError::InvalidArgument("payload size must be positive".into()));
    }
    match kind {
        BenchKind::Native => {
            let value = NativeValue::map([("data", NativeValue::Str("x".repeat(bytes)))]);
            Ok(Codec::new().encode_native_envelope(&value, topic)?)
        }
        BenchKind::Image => {
            let channels = if bytes.is_multiple_of(3) { 3 } else { 1 };
            let (w, h) = near_square(bytes / channels as usize);
            let pixels = (0..bytes).map(|i| (i % 251) as u8).collect();
            Ok(encode_image(&ImageFrame::raw(w, h, channels, pixels)?, topic)?)
        }
        BenchKind::Audio => {
            if !bytes.is_multiple_of(4) {
                return Err(BenchError::InvalidArgument(format!(
                    "audio payload must be a multiple of 4 bytes, got {bytes}"
                )));
            }
            let n = bytes / 4;
            let samples = (0..n).map(|i| ((i % 200) as f32 / 100.0) - 1.0).collect();
            let chunk = u32::try_from(n).map_err(|_| BenchError::InvalidArgument("audio payload too large".into()))?;
            Ok(encode_audio(&AudioChunk::new(44100, chunk, 1, samples)?, topic)?)
        }
    }
}

static BENCH_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Runs `count` echo round trips of a `kind` payload over `carrier`.
///
/// For tcp the replier registers in a private name registry, so no broker
/// and no shared state are involved.
pub fn run_bench(kind: BenchKind, bytes: usize, count: usize, carrier: &Carrier) -> Result<BenchRecord, BenchError> {
    if count < MIN_COUNT {
        return Err(BenchError::InvalidArgument(format!("count must be at least {MIN_COUNT}, got {count}")));
    }
    let registry_path: PathBuf = std::env::temp_dir().join(format!(
        "wrapify-bench-{}-{}.json",
        std::process::id(),
        BENCH_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let rt = Runtime::new(RuntimeConfig {
        registry_path: registry_path.clone(),
        tcp_direct: true,
        ..RuntimeConfig::default()
    });
    let topic = Topic::new(format!("/bench/echo_{}", BENCH_COUNTER.fetch_add(1, Ordering::Relaxed)))
        .expect("valid topic");
    let request = bench_envelope(kind, bytes, &topic)?;
    let opts = EndpointOptions::default();

    let mut replier = rt.open_replier(&topic, carrier, &opts)?;
    let stop = StopSignal::new();
    let server = {
        let stop = stop.clone();
        thread::spawn(move || replier.serve(Ok, &stop))
    };
    let result = (|| {
        let mut requester = rt.open_requester(&topic, carrier, &opts)?;
        let mut latencies_us = Vec::with_capacity(count);
        for _ in 0..count {
            let start = Instant::now();
            requester.request(&request, Some(ROUND_TRIP_LIMIT))?;
            latencies_us.push((start.elapsed().as_nanos() / 2 / 1000) as u64);
        }
        Ok::<_, BenchError>(latencies_us)
    })();
    stop.raise();
    let served = server.join().expect("echo replier thread panicked");
    let _ = std::fs::remove_file(&registry_path);
    let latencies_us = result?;
    served?;
    Ok(BenchRecord {
        payload_kind: kind,
        payload_bytes: bytes,
        transport: carrier.name().to_string(),
        count,
        stats: BenchStats::from_samples(&latencies_us[WARMUP..]),
        latencies_us,
    })
}
