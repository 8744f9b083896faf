//! Simulated program runs: register an object layout, patch it according to
//! an IC, and stream a trace through the sleds into a backend.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::thread;

use serde::Serialize;
use thiserror::Error;

use crate::backends::{make_backend, Backend, BackendError, BackendKind, BackendReport};
use crate::icformat::{load_ic, IcError, InstrumentationConfig};
use crate::patchrt::{
    ic_from_env, registry_from_layout, EventKind, ObjectLayout, PackedFunctionId, PatchReport, RegistryError,
    RegistryOptions, RuntimeRegistry,
};
use crate::trace::{Trace, TraceError};

/// Functions whose return marks the point where region registration
/// becomes possible.
pub const INIT_MARKERS: [&str; 2] = ["MPI_Init", "MPI_Init_thread"];

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Ic(#[from] IcError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("trace line {line}: function `{name}` is not part of any object")]
    UnknownFunction { line: usize, name: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy)]
pub struct ReplayOptions {
    pub backend: BackendKind,
    pub registry: RegistryOptions,
    /// Dispatch each thread's events on its own OS thread.
    pub parallel: bool,
}

impl ReplayOptions {
    pub fn new(backend: BackendKind) -> Self {
        ReplayOptions {
            backend,
            registry: RegistryOptions::default(),
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub patch: PatchReport,
    pub report: BackendReport,
    /// Trace events whose function was compiled without sleds.
    pub uninstrumented_events: usize,
}

impl ReplayOutcome {
    /// Whether anything went wrong that did not stop the run.
    pub fn has_diagnostics(&self) -> bool {
        let backend = match &self.report {
            BackendReport::Regions(r) => {
                !r.diagnostics.failed_registrations.is_empty() || r.diagnostics.dropped_events > 0
            }
            _ => false,
        };
        !self.patch.not_found.is_empty() || backend
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            patch: PatchDoc<'a>,
            report: serde_json::Value,
        }
        let report = serde_json::from_str(&self.report.to_json()).expect("report is JSON");
        serde_json::to_string(&Doc {
            patch: PatchDoc::from(&self.patch),
            report,
        })
        .expect("outcome serializes")
    }
}

#[derive(Serialize)]
struct PatchDoc<'a> {
    patched: usize,
    #[serde(rename = "notFound")]
    not_found: &'a [String],
    #[serde(rename = "skippedUnresolved")]
    skipped_unresolved: usize,
}

impl<'a> From<&'a PatchReport> for PatchDoc<'a> {
    fn from(p: &'a PatchReport) -> Self {
        PatchDoc {
            patched: p.patched,
            not_found: &p.not_found,
            skipped_unresolved: p.skipped_unresolved,
        }
    }
}

pub fn patch_report_json(p: &PatchReport) -> String {
    serde_json::to_string(&PatchDoc::from(p)).expect("patch report serializes")
}

pub fn patch_report_text(p: &PatchReport) -> String {
    let mut out = format!("patched: {}\n", p.patched);
    out += &format!("not found: {}", p.not_found.len());
    if !p.not_found.is_empty() {
        out += &format!(" ({})", p.not_found.join(", "));
    }
    out += "\n";
    out += &format!("skipped unresolved: {}\n", p.skipped_unresolved);
    out
}

/// IC from `path` if given, else from `CAPI_FILTERING_FILE`, else empty.
pub fn resolve_ic(path: Option<&Path>) -> Result<InstrumentationConfig, IcError> {
    match path {
        Some(p) => load_ic(p),
        None => Ok(ic_from_env()?.unwrap_or_default()),
    }
}

/// A trace event bound to the sled identity of its function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundEvent {
    pub id: PackedFunctionId,
    pub kind: EventKind,
    pub thread: u64,
    pub timestamp: u64,
}

/// Binds trace events to sled ids, dropping events of functions without
/// sleds. Returns the bound events and the number dropped.
pub fn bind_trace(
    layout: &ObjectLayout,
    registry: &RuntimeRegistry,
    trace: &Trace,
) -> Result<(Vec<(usize, BoundEvent)>, usize), ReplayError> {
    let known: HashMap<&str, ()> = layout
        .objects
        .iter()
        .flat_map(|o| o.functions.iter())
        .map(|f| (f.name.as_str(), ()))
        .collect();
    let mut bound = Vec::with_capacity(trace.len());
    let mut skipped = 0;
    for (i, e) in trace.events.iter().enumerate() {
        match registry.sled_id(&e.function) {
            Some(id) => bound.push((
                i,
                BoundEvent {
                    id,
                    kind: e.kind,
                    thread: e.thread,
                    timestamp: e.timestamp,
                },
            )),
            None if known.contains_key(e.function.as_str()) => skipped += 1,
            None => {
                return Err(ReplayError::UnknownFunction {
                    line: e.line,
                    name: e.function.clone(),
                })
            }
        }
    }
    Ok((bound, skipped))
}

/// Index of the trace event after which the backend is initialized.
fn init_point(kind: BackendKind, trace: &Trace) -> Option<usize> {
    if kind != BackendKind::Regions {
        return None;
    }
    trace
        .events
        .iter()
        .position(|e| e.kind == EventKind::Exit && INIT_MARKERS.contains(&e.function.as_str()))
}

pub fn replay(
    layout: &ObjectLayout,
    trace: &Trace,
    ic: &InstrumentationConfig,
    options: ReplayOptions,
) -> Result<ReplayOutcome, ReplayError> {
    let mut registry = registry_from_layout(layout, options.registry)?;
    let patch = registry.apply_ic(ic);
    let backend: Arc<dyn Backend> = make_backend(options.backend, Arc::new(registry.function_table()));
    registry.set_handler(backend.clone());
    let (bound, uninstrumented_events) = bind_trace(layout, &registry, trace)?;

    let init_after = init_point(options.backend, trace);
    if init_after.is_none() {
        backend.init()?;
    }
    // Events up to and including the init marker run before init, in trace order.
    let split = match init_after {
        Some(idx) => bound.partition_point(|(i, _)| *i <= idx),
        None => 0,
    };
    for (_, e) in &bound[..split] {
        registry.dispatch(e.id, e.kind, e.thread, e.timestamp);
    }
    if init_after.is_some() {
        backend.init()?;
    }

    let rest = &bound[split..];
    if options.parallel {
        let mut per_thread: BTreeMap<u64, Vec<BoundEvent>> = BTreeMap::new();
        for (_, e) in rest {
            per_thread.entry(e.thread).or_default().push(*e);
        }
        let reg = &registry;
        thread::scope(|s| {
            for events in per_thread.values() {
                s.spawn(move || {
                    for e in events {
                        reg.dispatch(e.id, e.kind, e.thread, e.timestamp);
                    }
                });
            }
        });
    } else {
        for (_, e) in rest {
            registry.dispatch(e.id, e.kind, e.thread, e.timestamp);
        }
    }

    let report = backend.finalize()?;
    Ok(ReplayOutcome {
        patch,
        report,
        uninstrumented_events,
    })
}
