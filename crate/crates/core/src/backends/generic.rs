use std::fmt::Write;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::{Backend, BackendDiagnostics, BackendError, BackendReport, Lifecycle};
use crate::patchrt::{EventHandler, EventKind, FunctionEvent, FunctionTable};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub thread: u64,
    pub kind: &'static str,
    pub address: u64,
    pub name: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EventLog {
    pub entries: Vec<LogEntry>,
}

impl EventLog {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "T{} {:<5} {:#012x} {} @{}", e.thread, e.kind, e.address, e.name, e.timestamp);
        }
        out
    }
}

/// Appends every event with the function's address, like
/// `__cyg_profile_func_enter`/`__cyg_profile_func_exit` receivers do.
pub struct GenericHandler {
    functions: Arc<FunctionTable>,
    log: Mutex<Vec<LogEntry>>,
    lifecycle: Lifecycle,
}

impl GenericHandler {
    pub fn new(functions: Arc<FunctionTable>) -> Self {
        GenericHandler {
            functions,
            log: Mutex::new(Vec::new()),
            lifecycle: Lifecycle::default(),
        }
    }

    pub fn snapshot(&self) -> EventLog {
        EventLog {
            entries: self.log.lock().expect("log lock").clone(),
        }
    }
}

impl EventHandler for GenericHandler {
    fn handle(&self, event: &FunctionEvent) {
        let address = self.functions.get(event.id).map(|f| f.address).unwrap_or(0);
        let entry = LogEntry {
            thread: event.thread,
            kind: match event.kind {
                EventKind::Entry => "enter",
                EventKind::Exit => "exit",
            },
            address,
            name: self.functions.label(event.id),
            timestamp: event.timestamp,
        };
        self.log.lock().expect("log lock").push(entry);
    }
}

impl Backend for GenericHandler {
    fn init(&self) -> Result<(), BackendError> {
        self.lifecycle.init()
    }

    fn is_initialized(&self) -> bool {
        self.lifecycle.is_initialized()
    }

    fn finalize(&self) -> Result<BackendReport, BackendError> {
        self.lifecycle.finalize()?;
        Ok(BackendReport::Events(self.snapshot()))
    }

    fn diagnostics(&self) -> BackendDiagnostics {
        BackendDiagnostics::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchrt::{FunctionImage, ObjectImage, RuntimeRegistry};

    #[test]
    fn logs_resolved_and_unresolved_functions() {
        let mut reg = RuntimeRegistry::default();
        let mut img = ObjectImage::new("app", vec![FunctionImage::new("foo"), FunctionImage::new("h").hidden()]);
        img.functions[1].symbol = true;
        reg.register_object(&img, &img.symbols()).unwrap();
        let h = Arc::new(GenericHandler::new(Arc::new(reg.function_table())));
        reg.set_handler(h.clone());
        reg.patch_all();
        let foo = reg.sled_id("foo").unwrap();
        let hid = reg.sled_id("h").unwrap();
        reg.dispatch(foo, EventKind::Entry, 0, 1);
        reg.dispatch(hid, EventKind::Entry, 0, 2);
        reg.dispatch(hid, EventKind::Exit, 0, 3);
        reg.dispatch(foo, EventKind::Exit, 0, 4);
        let log = h.snapshot();
        let names: Vec<_> = log.entries.iter().map(|e| (e.kind, e.name.as_str())).collect();
        let unknown = format!("unknown@{:#x}", RuntimeRegistry::base_address(0) + 16);
        assert_eq!(
            names,
            [("enter", "foo"), ("enter", unknown.as_str()), ("exit", unknown.as_str()), ("exit", "foo")]
        );
        assert_eq!(log.entries[0].address, RuntimeRegistry::base_address(0));
        assert!(h.finalize().is_ok());
        assert_eq!(h.finalize(), Err(BackendError::AlreadyFinalized));
    }
}
