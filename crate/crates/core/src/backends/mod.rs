//! Measurement backends fed by patched sleds.
//!
//! * [`GenericHandler`]: enter/exit log keyed by function address, the
//!   `-finstrument-functions` style interface.
//! * [`Profiler`]: per-thread call-path profile with inclusive and
//!   exclusive times.
//! * [`RegionMonitor`]: named start/stop monitoring regions that need an
//!   explicit init before regions can be registered.

mod counting;
mod generic;
mod profile;
mod regions;

use std::collections::BTreeSet;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

pub use counting::CountingHandler;
pub use generic::{EventLog, GenericHandler, LogEntry};
pub use profile::{CallPath, ProfileRecord, ProfileReport, Profiler};
pub use regions::{RegionHandle, RegionMonitor, RegionReport, RegionRow};

use crate::patchrt::{EventHandler, FunctionTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend already initialized")]
    AlreadyInitialized,
    #[error("backend already finalized")]
    AlreadyFinalized,
    #[error("thread {thread}: exit of `{function}` {reason}")]
    Unbalanced {
        thread: u64,
        function: String,
        reason: String,
    },
    #[error("thread {thread}: `{function}` still open at finalize")]
    Unterminated { thread: u64, function: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BackendDiagnostics {
    #[serde(rename = "failedRegistrations")]
    pub failed_registrations: BTreeSet<String>,
    #[serde(rename = "droppedEvents")]
    pub dropped_events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Generic,
    Profile,
    Regions,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generic" => Ok(BackendKind::Generic),
            "profile" => Ok(BackendKind::Profile),
            "regions" => Ok(BackendKind::Regions),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

/// A handler with a lifecycle. `finalize` yields the report exactly once.
pub trait Backend: EventHandler {
    fn init(&self) -> Result<(), BackendError>;
    fn is_initialized(&self) -> bool;
    fn finalize(&self) -> Result<BackendReport, BackendError>;
    fn diagnostics(&self) -> BackendDiagnostics;
}

pub fn make_backend(kind: BackendKind, functions: Arc<FunctionTable>) -> Arc<dyn Backend> {
    match kind {
        BackendKind::Generic => Arc::new(GenericHandler::new(functions)),
        BackendKind::Profile => Arc::new(Profiler::new(functions)),
        BackendKind::Regions => Arc::new(RegionMonitor::new(functions)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendReport {
    Events(EventLog),
    Profile(ProfileReport),
    Regions(RegionReport),
}

impl BackendReport {
    pub fn to_text(&self) -> String {
        match self {
            BackendReport::Events(r) => r.to_text(),
            BackendReport::Profile(r) => r.to_text(),
            BackendReport::Regions(r) => r.to_text(),
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            BackendReport::Events(r) => serde_json::to_string(r),
            BackendReport::Profile(r) => serde_json::to_string(r),
            BackendReport::Regions(r) => serde_json::to_string(r),
        }
        .expect("report serializes")
    }

    /// Every function (or region) name that appears in the report.
    pub fn functions(&self) -> BTreeSet<String> {
        match self {
            BackendReport::Events(r) => r.entries.iter().map(|e| e.name.clone()).collect(),
            BackendReport::Profile(r) => r.functions(),
            BackendReport::Regions(r) => r.rows.iter().map(|row| row.name.clone()).collect(),
        }
    }
}

/// Once-only lifecycle flags shared by the backends.
#[derive(Debug, Default)]
struct Lifecycle {
    initialized: std::sync::atomic::AtomicBool,
    finalized: std::sync::atomic::AtomicBool,
}

impl Lifecycle {
    fn init(&self) -> Result<(), BackendError> {
        use std::sync::atomic::Ordering;
        if self.initialized.swap(true, Ordering::AcqRel) {
            Err(BackendError::AlreadyInitialized)
        } else {
            Ok(())
        }
    }

    fn is_initialized(&self) -> bool {
        self.initialized.load(std::sync::atomic::Ordering::Acquire)
    }

    fn finalize(&self) -> Result<(), BackendError> {
        use std::sync::atomic::Ordering;
        if self.finalized.swap(true, Ordering::AcqRel) {
            Err(BackendError::AlreadyFinalized)
        } else {
            Ok(())
        }
    }
}
