use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::{Backend, BackendDiagnostics, BackendError, BackendReport, Lifecycle};
use crate::patchrt::{EventHandler, EventKind, FunctionEvent, FunctionTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionHandle(pub u32);

#[derive(Debug, Default)]
struct Region {
    name: String,
    entries: u64,
    elapsed: u64,
    /// thread -> (nesting depth, start of the outermost open interval)
    open: HashMap<u64, (u32, u64)>,
}

#[derive(Default)]
struct Inner {
    regions: Vec<Region>,
    by_name: HashMap<String, RegionHandle>,
    diagnostics: BackendDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegionRow {
    pub name: String,
    pub entries: u64,
    pub elapsed: u64,
    pub mean: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RegionReport {
    pub rows: Vec<RegionRow>,
    /// Sum of per-thread nesting depths still open when the report was taken.
    #[serde(rename = "openAtFinalize")]
    pub open_at_finalize: u64,
    pub diagnostics: BackendDiagnostics,
}

impl RegionReport {
    pub fn row(&self, name: &str) -> Option<&RegionRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("region".len());
        let _ = writeln!(out, "{:<w$}  {:>8}  {:>14}  {:>14}", "region", "entries", "elapsed", "mean");
        for r in &self.rows {
            let _ = writeln!(out, "{:<w$}  {:>8}  {:>14}  {:>14}", r.name, r.entries, r.elapsed, r.mean);
        }
        let failed = &self.diagnostics.failed_registrations;
        if !failed.is_empty() {
            let names: Vec<&str> = failed.iter().map(String::as_str).collect();
            let _ = writeln!(out, "failed registrations: {} ({})", failed.len(), names.join(", "));
        }
        if self.diagnostics.dropped_events > 0 {
            let _ = writeln!(out, "dropped events: {}", self.diagnostics.dropped_events);
        }
        if self.open_at_finalize > 0 {
            let _ = writeln!(out, "regions still open: {}", self.open_at_finalize);
        }
        out
    }
}

/// Named monitoring regions with start/stop intervals per thread.
///
/// Regions can only be registered after [`Backend::init`]; function entries
/// seen earlier are recorded as failed registrations and not measured.
/// Nested starts of an open region deepen its nesting on that thread, and
/// elapsed time accrues from the outermost start to the matching stop.
pub struct RegionMonitor {
    functions: Arc<FunctionTable>,
    inner: Mutex<Inner>,
    lifecycle: Lifecycle,
}

impl RegionMonitor {
    pub fn new(functions: Arc<FunctionTable>) -> Self {
        RegionMonitor {
            functions,
            inner: Mutex::new(Inner::default()),
            lifecycle: Lifecycle::default(),
        }
    }

    /// Returns `None` (and records the failure) before init.
    pub fn register(&self, name: &str) -> Option<RegionHandle> {
        let mut inner = self.inner.lock().expect("regions lock");
        self.register_locked(&mut inner, name)
    }

    fn register_locked(&self, inner: &mut Inner, name: &str) -> Option<RegionHandle> {
        if !self.lifecycle.is_initialized() {
            inner.diagnostics.failed_registrations.insert(name.to_string());
            return None;
        }
        if let Some(h) = inner.by_name.get(name) {
            return Some(*h);
        }
        let h = RegionHandle(inner.regions.len() as u32);
        inner.regions.push(Region {
            name: name.to_string(),
            ..Default::default()
        });
        inner.by_name.insert(name.to_string(), h);
        Some(h)
    }

    pub fn start(&self, handle: RegionHandle, thread: u64, t: u64) {
        let mut inner = self.inner.lock().expect("regions lock");
        Self::start_locked(&mut inner, handle, thread, t);
    }

    fn start_locked(inner: &mut Inner, handle: RegionHandle, thread: u64, t: u64) {
        let Some(region) = inner.regions.get_mut(handle.0 as usize) else {
            inner.diagnostics.dropped_events += 1;
            return;
        };
        region.entries += 1;
        let slot = region.open.entry(thread).or_insert((0, t));
        if slot.0 == 0 {
            slot.1 = t;
        }
        slot.0 += 1;
    }

    pub fn stop(&self, handle: RegionHandle, thread: u64, t: u64) {
        let mut inner = self.inner.lock().expect("regions lock");
        Self::stop_locked(&mut inner, handle, thread, t);
    }

    fn stop_locked(inner: &mut Inner, handle: RegionHandle, thread: u64, t: u64) {
        let closed = match inner.regions.get_mut(handle.0 as usize) {
            Some(region) => match region.open.get_mut(&thread) {
                Some(slot) if slot.0 > 0 => {
                    slot.0 -= 1;
                    if slot.0 == 0 {
                        region.elapsed += t.saturating_sub(slot.1);
                        region.open.remove(&thread);
                    }
                    true
                }
                _ => false,
            },
            None => false,
        };
        if !closed {
            log::debug!("stop of region {handle:?} that is not open on thread {thread}");
            inner.diagnostics.dropped_events += 1;
        }
    }

    pub fn report(&self) -> RegionReport {
        let inner = self.inner.lock().expect("regions lock");
        let rows: BTreeMap<&str, RegionRow> = inner
            .regions
            .iter()
            .map(|r| {
                (
                    r.name.as_str(),
                    RegionRow {
                        name: r.name.clone(),
                        entries: r.entries,
                        elapsed: r.elapsed,
                        mean: r.elapsed.checked_div(r.entries).unwrap_or(0),
                    },
                )
            })
            .collect();
        RegionReport {
            rows: rows.into_values().collect(),
            open_at_finalize: inner
                .regions
                .iter()
                .flat_map(|r| r.open.values())
                .map(|(depth, _)| *depth as u64)
                .sum(),
            diagnostics: inner.diagnostics.clone(),
        }
    }
}

impl EventHandler for RegionMonitor {
    fn handle(&self, event: &FunctionEvent) {
        let name = self.functions.display_label(event.id);
        let mut inner = self.inner.lock().expect("regions lock");
        match event.kind {
            EventKind::Entry => match self.register_locked(&mut inner, &name) {
                Some(h) => Self::start_locked(&mut inner, h, event.thread, event.timestamp),
                None => inner.diagnostics.dropped_events += 1,
            },
            EventKind::Exit => match inner.by_name.get(&name).copied() {
                Some(h) => Self::stop_locked(&mut inner, h, event.thread, event.timestamp),
                None => inner.diagnostics.dropped_events += 1,
            },
        }
    }
}

impl Backend for RegionMonitor {
    fn init(&self) -> Result<(), BackendError> {
        self.lifecycle.init()
    }

    fn is_initialized(&self) -> bool {
        self.lifecycle.is_initialized()
    }

    fn finalize(&self) -> Result<BackendReport, BackendError> {
        self.lifecycle.finalize()?;
        Ok(BackendReport::Regions(self.report()))
    }

    fn diagnostics(&self) -> BackendDiagnostics {
        self.inner.lock().expect("regions lock").diagnostics.clone()
    }
}
