//! Dispatch throughput with every sled a NOP versus every sled patched.

use std::hint::black_box;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Serialize, Serializer};

use crate::backends::CountingHandler;
use crate::icformat::InstrumentationConfig;
use crate::patchrt::{registry_from_layout, FunctionImage, ObjectImage, ObjectLayout, RegistryOptions};
use crate::replay::{bind_trace, BoundEvent, ReplayError};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    /// Lower bound on dispatched events per measurement.
    pub min_events: usize,
    /// Measurements per configuration; the fastest one is kept.
    pub repeats: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            min_events: 200_000,
            repeats: 5,
        }
    }
}

fn ser_secs<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    #[serde(rename = "eventsPerRun")]
    pub events_per_run: usize,
    #[serde(rename = "nopSeconds", serialize_with = "ser_secs")]
    pub nop: Duration,
    #[serde(rename = "patchedSeconds", serialize_with = "ser_secs")]
    pub patched: Duration,
    /// Events the handler saw during the NOP runs.
    #[serde(rename = "nopHandlerCalls")]
    pub nop_handler_calls: u64,
    /// Events the handler saw during one patched run.
    #[serde(rename = "patchedHandlerCalls")]
    pub patched_handler_calls: u64,
    #[serde(rename = "icSize")]
    pub ic_size: usize,
    #[serde(rename = "applyIcSeconds", serialize_with = "ser_secs")]
    pub apply_ic: Duration,
}

impl BenchResult {
    fn rate(&self, d: Duration) -> f64 {
        if d.is_zero() {
            f64::INFINITY
        } else {
            self.events_per_run as f64 / d.as_secs_f64()
        }
    }

    pub fn nop_events_per_second(&self) -> f64 {
        self.rate(self.nop)
    }

    pub fn patched_events_per_second(&self) -> f64 {
        self.rate(self.patched)
    }

    /// NOP cost as a fraction of the patched cost.
    pub fn ratio(&self) -> f64 {
        self.nop.as_secs_f64() / self.patched.as_secs_f64().max(f64::MIN_POSITIVE)
    }

    pub fn to_text(&self) -> String {
        format!(
            "events per run: {}\n\
             all-NOP:     {:>14.0} events/s ({:.6}s)\n\
             all-PATCHED: {:>14.0} events/s ({:.6}s)\n\
             NOP/PATCHED cost ratio: {:.4}\n\
             applyIC ({} functions): {:.6}s\n",
            self.events_per_run,
            self.nop_events_per_second(),
            self.nop.as_secs_f64(),
            self.patched_events_per_second(),
            self.patched.as_secs_f64(),
            self.ratio(),
            self.ic_size,
            self.apply_ic.as_secs_f64(),
        )
    }
}

fn run(reg: &crate::patchrt::RuntimeRegistry, events: &[BoundEvent], rounds: usize) -> Duration {
    let start = Instant::now();
    for _ in 0..rounds {
        for e in events {
            reg.dispatch(black_box(e.id), e.kind, e.thread, e.timestamp);
        }
    }
    start.elapsed()
}

/// Replays `trace` (in rounds until `min_events`) through a registry whose
/// sleds are all NOP, then all patched, with a counting handler installed.
pub fn bench(layout: &ObjectLayout, trace: &Trace, options: BenchOptions) -> Result<BenchResult, ReplayError> {
    let mut reg = registry_from_layout(layout, RegistryOptions::default())?;
    let counter = Arc::new(CountingHandler::new());
    reg.set_handler(counter.clone());
    let (bound, _) = bind_trace(layout, &reg, trace)?;
    let events: Vec<BoundEvent> = bound.into_iter().map(|(_, e)| e).collect();
    // The trace is replayed in rounds rather than copied out, so the cost of
    // reading events stays small next to dispatch.
    let rounds = if events.is_empty() {
        0
    } else {
        options.min_events.div_ceil(events.len())
    };

    let ic = InstrumentationConfig {
        include: reg.resolved_names().into_iter().collect(),
        ..Default::default()
    };
    let start = Instant::now();
    reg.apply_ic(&ic);
    let apply_ic = start.elapsed();

    // Alternate the two configurations so drift in machine speed affects
    // both alike.
    let mut nop = Duration::MAX;
    let mut patched = Duration::MAX;
    let mut nop_handler_calls = 0;
    let mut patched_handler_calls = 0;
    for _ in 0..options.repeats.max(1) {
        reg.unpatch_all();
        counter.reset();
        nop = nop.min(run(&reg, &events, rounds));
        nop_handler_calls += counter.total();

        reg.patch_all();
        counter.reset();
        patched = patched.min(run(&reg, &events, rounds));
        patched_handler_calls = counter.total();
    }

    Ok(BenchResult {
        events_per_run: events.len() * rounds,
        nop,
        patched,
        nop_handler_calls,
        patched_handler_calls,
        ic_size: ic.len(),
        apply_ic,
    })
}

/// Layout with a single object of `n` visible functions `f0..f{n-1}`.
pub fn synthetic_layout(n: usize) -> ObjectLayout {
    ObjectLayout {
        objects: vec![ObjectImage::new(
            "synthetic",
            (0..n).map(|i| FunctionImage::new(format!("f{i}"))).collect(),
        )],
    }
}

/// Time to apply an IC naming every function of an `n`-function registry.
pub fn time_apply_ic(n: usize) -> Duration {
    let mut reg = registry_from_layout(&synthetic_layout(n), RegistryOptions::default()).expect("synthetic layout");
    let ic = InstrumentationConfig {
        include: (0..n).map(|i| format!("f{i}")).collect(),
        ..Default::default()
    };
    let start = Instant::now();
    let report = reg.apply_ic(&ic);
    let elapsed = start.elapsed();
    assert_eq!(report.patched, n);
    elapsed
}
