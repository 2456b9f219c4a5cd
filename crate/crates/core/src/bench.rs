//! Wall-clock cost of an XOR mask versus a reference KDF call.
//!
//! Each measurement draws its inputs up front from a seeded stream, runs the
//! operation in timed batches large enough to swamp the timer tick, folds
//! every output into a sink that is returned to the caller, and reports the
//! median of five runs.

use std::hint::black_box;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::crypto::{kdf_derive, KdfContext, KdfSpec, KeyBytes, Nonce, SeedStream};

pub const MIN_ITERATIONS: u64 = 10_000;
pub const RUNS: usize = 5;
const WARMUP: u64 = 1_000;
/// Distinct inputs cycled through during a run.
const POOL: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BenchError {
    #[error("at least {MIN_ITERATIONS} iterations required, got {0}")]
    TooFewIterations(u64),
    #[error("key size must be a positive multiple of 8 bits, got {0}")]
    BadKeyBits(usize),
}

#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Op {
    XOR,
    KDF_REFERENCE,
}

/// One operation's timing.
#[derive(Clone, Debug, Serialize)]
pub struct Measurement {
    pub op: Op,
    pub key_bits: usize,
    pub iterations: u64,
    /// Operations per timed batch.
    pub batch: u64,
    pub ns_per_op: f64,
    /// Per-run values the median is taken over.
    pub runs_ns_per_op: Vec<f64>,
    /// Folded outputs; printed so the work cannot be elided.
    pub sink: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CostReport {
    pub key_bits: usize,
    pub iterations: u64,
    pub xor_ns_per_op: f64,
    pub kdf_ns_per_op: f64,
    pub ratio: f64,
    pub environment: String,
    pub timer_tick_ns: f64,
    pub xor: Measurement,
    pub kdf: Measurement,
}

impl CostReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<14} {:>10} {:>12} {:>14}\n", "op", "key_bits", "iterations", "ns/op"));
        for m in [&self.xor, &self.kdf] {
            s.push_str(&format!(
                "{:<14} {:>10} {:>12} {:>14.2}\n",
                format!("{:?}", m.op),
                m.key_bits,
                m.iterations,
                m.ns_per_op
            ));
        }
        s.push_str(&format!("ratio kdf/xor  {:.1}\n", self.ratio));
        s.push_str(&format!("environment    {}\n", self.environment));
        s
    }
}

/// Smallest nonzero step observed between consecutive `Instant` reads.
pub fn timer_tick() -> Duration {
    let mut best = Duration::from_secs(1);
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

pub fn environment() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_owned())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map_or(0, |n| n.get());
    let assertions = if cfg!(debug_assertions) { "on" } else { "off" };
    format!(
        "{cpu}; {threads} threads; {}-{}; debug assertions {assertions}",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

struct Inputs {
    keys: Vec<KeyBytes>,
    masks: Vec<KeyBytes>,
    contexts: Vec<KdfContext>,
    spec: KdfSpec,
}

impl Inputs {
    fn draw(bytes: usize, seed: u64) -> Inputs {
        let mut rng = SeedStream::new(seed);
        Inputs {
            keys: (0..POOL).map(|_| rng.key(bytes)).collect(),
            masks: (0..POOL).map(|_| rng.key(bytes)).collect(),
            contexts: (0..POOL)
                .map(|_| KdfContext::new("otk", Nonce::new(rng.bytes(bytes))))
                .collect(),
            spec: KdfSpec::reference(bytes),
        }
    }

    #[inline]
    fn one(&self, op: Op, i: usize, buf: &mut [u8]) -> u64 {
        let i = i % POOL;
        match op {
            Op::XOR => {
                let (a, b) = (self.keys[i].as_bytes(), self.masks[i].as_bytes());
                for ((o, x), y) in buf.iter_mut().zip(a).zip(b) {
                    *o = x ^ y;
                }
                u64::from(black_box(&*buf)[0])
            }
            Op::KDF_REFERENCE => {
                let k = kdf_derive(&self.keys[i], &self.contexts[i], self.spec).expect("valid spec");
                u64::from(black_box(k).as_bytes()[0])
            }
        }
    }

    fn batch(&self, op: Op, start: u64, count: u64, buf: &mut [u8]) -> u64 {
        let mut sink = 0u64;
        for j in 0..count {
            sink = sink.wrapping_add(self.one(op, black_box((start + j) as usize), buf));
        }
        sink
    }
}

/// Batch size whose timed span is at least 1000 timer ticks.
fn choose_batch(inputs: &Inputs, op: Op, tick: Duration, buf: &mut [u8]) -> u64 {
    let mut batch = 1u64;
    loop {
        let t = Instant::now();
        black_box(inputs.batch(op, 0, batch, buf));
        if t.elapsed() >= tick * 1000 || batch >= 1 << 24 {
            return batch;
        }
        batch *= 2;
    }
}

/// Median ns/op of [`RUNS`] runs of `iterations` operations each.
pub fn measure(op: Op, key_bits: usize, iterations: u64, seed: u64) -> Result<Measurement, BenchError> {
    if iterations < MIN_ITERATIONS {
        return Err(BenchError::TooFewIterations(iterations));
    }
    if key_bits == 0 || !key_bits.is_multiple_of(8) {
        return Err(BenchError::BadKeyBits(key_bits));
    }
    let bytes = key_bits / 8;
    let inputs = Inputs::draw(bytes, seed);
    let mut buf = vec![0u8; bytes];
    let tick = timer_tick();
    let mut sink = inputs.batch(op, 0, WARMUP, &mut buf);
    let batch = choose_batch(&inputs, op, tick, &mut buf).min(iterations);

    let mut runs = Vec::with_capacity(RUNS);
    for _ in 0..RUNS {
        let mut done = 0u64;
        let mut spent = Duration::ZERO;
        while done < iterations {
            let n = batch.min(iterations - done);
            let t = Instant::now();
            sink = sink.wrapping_add(inputs.batch(op, done, n, &mut buf));
            spent += t.elapsed();
            done += n;
        }
        runs.push(spent.as_nanos() as f64 / iterations as f64);
    }
    let mut sorted = runs.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(Measurement {
        op,
        key_bits,
        iterations,
        batch,
        ns_per_op: sorted[RUNS / 2],
        runs_ns_per_op: runs,
        sink,
    })
}

pub fn compare(key_bits: usize, iterations: u64, seed: u64) -> Result<CostReport, BenchError> {
    let xor = measure(Op::XOR, key_bits, iterations, seed)?;
    let kdf = measure(Op::KDF_REFERENCE, key_bits, iterations, seed)?;
    Ok(CostReport {
        key_bits,
        iterations,
        xor_ns_per_op: xor.ns_per_op,
        kdf_ns_per_op: kdf.ns_per_op,
        ratio: kdf.ns_per_op / xor.ns_per_op,
        environment: environment(),
        timer_tick_ns: timer_tick().as_nanos() as f64,
        xor,
        kdf,
    })
}
