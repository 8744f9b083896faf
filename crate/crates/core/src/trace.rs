//! Text traces of function events, one per line:
//!
//! ```text
//! T<thread> <enter|exit> <function> <timestamp-ns>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::patchrt::EventKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("cannot read trace {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("trace line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub thread: u64,
    pub kind: EventKind,
    pub function: String,
    pub timestamp: u64,
    /// 1-based source line.
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TraceError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let bad = |msg: String| TraceError::Malformed { line, msg };
            let fields: Vec<&str> = s.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", fields.len())));
            }
            let thread = fields[0]
                .strip_prefix('T')
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad(format!("bad thread id `{}`", fields[0])))?;
            let kind = match fields[1] {
                "enter" => EventKind::Entry,
                "exit" => EventKind::Exit,
                other => return Err(bad(format!("bad event kind `{other}`"))),
            };
            let timestamp = fields[3]
                .parse()
                .map_err(|_| bad(format!("bad timestamp `{}`", fields[3])))?;
            events.push(TraceEvent {
                thread,
                kind,
                function: fields[2].to_string(),
                timestamp,
                line,
            });
        }
        Ok(Trace { events })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let kind = match e.kind {
                EventKind::Entry => "enter",
                EventKind::Exit => "exit",
            };
            let _ = writeln!(out, "T{} {} {} {}", e.thread, kind, e.function, e.timestamp);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events grouped by thread, each group in trace order.
    pub fn by_thread(&self) -> BTreeMap<u64, Vec<&TraceEvent>> {
        let mut m: BTreeMap<u64, Vec<&TraceEvent>> = BTreeMap::new();
        for e in &self.events {
            m.entry(e.thread).or_default().push(e);
        }
        m
    }
}
