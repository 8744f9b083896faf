use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write;
use std::sync::{Arc, Mutex};

use serde::{Serialize, Serializer};

use super::{Backend, BackendDiagnostics, BackendError, BackendReport, Lifecycle};
use crate::patchrt::{EventHandler, EventKind, FunctionEvent, FunctionTable, PackedFunctionId};

/// Function names from the outermost frame down to the measured one.
pub type CallPath = Vec<String>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProfileRecord {
    #[serde(rename = "calls")]
    pub call_count: u64,
    pub inclusive: u64,
    pub exclusive: u64,
}

impl ProfileRecord {
    fn add(&mut self, other: &ProfileRecord) {
        self.call_count += other.call_count;
        self.inclusive += other.inclusive;
        self.exclusive += other.exclusive;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ProfileReport {
    #[serde(serialize_with = "ser_threads")]
    pub threads: BTreeMap<u64, BTreeMap<CallPath, ProfileRecord>>,
    #[serde(serialize_with = "ser_paths")]
    pub merged: BTreeMap<CallPath, ProfileRecord>,
}

#[derive(Serialize)]
struct PathRow<'a> {
    path: String,
    #[serde(flatten)]
    record: &'a ProfileRecord,
}

fn path_rows(paths: &BTreeMap<CallPath, ProfileRecord>) -> Vec<PathRow<'_>> {
    paths
        .iter()
        .map(|(p, r)| PathRow {
            path: p.join("/"),
            record: r,
        })
        .collect()
}

fn ser_paths<S: Serializer>(paths: &BTreeMap<CallPath, ProfileRecord>, s: S) -> Result<S::Ok, S::Error> {
    path_rows(paths).serialize(s)
}

fn ser_threads<S: Serializer>(threads: &BTreeMap<u64, BTreeMap<CallPath, ProfileRecord>>, s: S) -> Result<S::Ok, S::Error> {
    let m: BTreeMap<String, Vec<PathRow<'_>>> = threads.iter().map(|(t, p)| (t.to_string(), path_rows(p))).collect();
    m.serialize(s)
}

impl ProfileReport {
    pub fn is_empty(&self) -> bool {
        self.merged.is_empty()
    }

    pub fn functions(&self) -> BTreeSet<String> {
        self.merged.keys().flat_map(|p| p.iter().cloned()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let w = self
            .merged
            .keys()
            .map(|p| p.join("/").len())
            .max()
            .unwrap_or(0)
            .max("call path".len());
        let _ = writeln!(out, "{:<w$}  {:>8}  {:>14}  {:>14}", "call path", "calls", "inclusive", "exclusive");
        for (path, r) in &self.merged {
            let _ = writeln!(
                out,
                "{:<w$}  {:>8}  {:>14}  {:>14}",
                path.join("/"),
                r.call_count,
                r.inclusive,
                r.exclusive
            );
        }
        out
    }
}

struct Frame {
    id: PackedFunctionId,
    name: String,
    start: u64,
    children: u64,
}

#[derive(Default)]
struct ThreadState {
    stack: Vec<Frame>,
    records: BTreeMap<CallPath, ProfileRecord>,
    error: Option<BackendError>,
}

impl ThreadState {
    fn enter(&mut self, id: PackedFunctionId, name: String, ts: u64) {
        self.stack.push(Frame {
            id,
            name,
            start: ts,
            children: 0,
        });
    }

    fn exit(&mut self, thread: u64, id: PackedFunctionId, name: String, ts: u64) -> Result<(), BackendError> {
        let top = match self.stack.last() {
            None => {
                return Err(BackendError::Unbalanced {
                    thread,
                    function: name,
                    reason: "without matching enter".into(),
                })
            }
            Some(top) => top,
        };
        if top.id != id {
            return Err(BackendError::Unbalanced {
                thread,
                function: name,
                reason: format!("while `{}` is innermost", top.name),
            });
        }
        if ts < top.start {
            return Err(BackendError::Unbalanced {
                thread,
                function: name,
                reason: format!("at {ts}, before its enter at {}", top.start),
            });
        }
        let frame = self.stack.pop().expect("checked above");
        let inclusive = ts - frame.start;
        let exclusive = inclusive.saturating_sub(frame.children);
        let mut path: CallPath = self.stack.iter().map(|f| f.name.clone()).collect();
        path.push(frame.name);
        self.records.entry(path).or_default().add(&ProfileRecord {
            call_count: 1,
            inclusive,
            exclusive,
        });
        if let Some(parent) = self.stack.last_mut() {
            parent.children += inclusive;
        }
        Ok(())
    }
}

/// Call-path profiler. Events of each thread must be properly nested.
pub struct Profiler {
    functions: Arc<FunctionTable>,
    threads: Mutex<HashMap<u64, Arc<Mutex<ThreadState>>>>,
    lifecycle: Lifecycle,
}

impl Profiler {
    pub fn new(functions: Arc<FunctionTable>) -> Self {
        Profiler {
            functions,
            threads: Mutex::new(HashMap::new()),
            lifecycle: Lifecycle::default(),
        }
    }

    fn thread(&self, thread: u64) -> Arc<Mutex<ThreadState>> {
        self.threads
            .lock()
            .expect("threads lock")
            .entry(thread)
            .or_default()
            .clone()
    }

    /// Builds the report from everything recorded so far.
    pub fn finish(&self) -> Result<ProfileReport, BackendError> {
        let threads = self.threads.lock().expect("threads lock");
        let mut ids: Vec<u64> = threads.keys().copied().collect();
        ids.sort_unstable();
        let mut report = ProfileReport::default();
        for t in ids {
            let state = threads[&t].lock().expect("thread lock");
            if let Some(e) = &state.error {
                return Err(e.clone());
            }
            if let Some(open) = state.stack.last() {
                return Err(BackendError::Unterminated {
                    thread: t,
                    function: open.name.clone(),
                });
            }
            for (path, r) in &state.records {
                report.merged.entry(path.clone()).or_default().add(r);
            }
            report.threads.insert(t, state.records.clone());
        }
        Ok(report)
    }
}

impl EventHandler for Profiler {
    fn handle(&self, event: &FunctionEvent) {
        let name = self.functions.label(event.id);
        let state = self.thread(event.thread);
        let mut state = state.lock().expect("thread lock");
        if state.error.is_some() {
            return;
        }
        match event.kind {
            EventKind::Entry => state.enter(event.id, name, event.timestamp),
            EventKind::Exit => {
                if let Err(e) = state.exit(event.thread, event.id, name, event.timestamp) {
                    state.error = Some(e);
                }
            }
        }
    }
}

impl Backend for Profiler {
    fn init(&self) -> Result<(), BackendError> {
        self.lifecycle.init()
    }

    fn is_initialized(&self) -> bool {
        self.lifecycle.is_initialized()
    }

    fn finalize(&self) -> Result<BackendReport, BackendError> {
        self.lifecycle.finalize()?;
        self.finish().map(BackendReport::Profile)
    }

    fn diagnostics(&self) -> BackendDiagnostics {
        BackendDiagnostics::default()
    }
}
