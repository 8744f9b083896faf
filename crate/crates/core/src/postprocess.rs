//! Inlining compensation and selection statistics.
//!
//! Functions missing from every object's symbol table are assumed to have
//! been inlined at all call sites and cannot be patched. Selected inlined
//! functions are replaced by their nearest non-inlined callers.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt::Write;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::callgraph::CallGraph;
use crate::selectors::{NameSet, SelectionSet};

/// Main executable plus at most 255 shared objects.
pub const MAX_OBJECTS: usize = 256;

#[derive(Debug, Error)]
pub enum SymbolTableError {
    #[error("failed to read symbol table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed symbol table: {0}")]
    Parse(String),
    #[error("symbol table lists {0} objects; at most {MAX_OBJECTS} are supported")]
    TooManyObjects(usize),
    #[error("symbol `{symbol}` refers to unknown object `{object}`")]
    UnknownObject { symbol: String, object: String },
    #[error("address {addr:#x} used by both `{first}` and `{second}` in object `{object}`")]
    DuplicateAddress {
        object: String,
        addr: u64,
        first: String,
        second: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolEntry {
    #[serde(rename = "object")]
    pub object_name: String,
    #[serde(rename = "addr")]
    pub local_address: u64,
    #[serde(default)]
    pub hidden: bool,
}

/// `nm`-style symbol listing across the executable (object 0) and its DSOs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolTable {
    pub objects: Vec<String>,
    #[serde(rename = "symbols")]
    pub entries: BTreeMap<String, SymbolEntry>,
}

impl SymbolTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SymbolTableError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| SymbolTableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, SymbolTableError> {
        let table: SymbolTable = serde_json::from_str(text).map_err(|e| SymbolTableError::Parse(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("symbol table serializes")
    }

    pub fn validate(&self) -> Result<(), SymbolTableError> {
        if self.objects.len() > MAX_OBJECTS {
            return Err(SymbolTableError::TooManyObjects(self.objects.len()));
        }
        let known: HashSet<&str> = self.objects.iter().map(String::as_str).collect();
        let mut addrs: BTreeMap<(&str, u64), &str> = BTreeMap::new();
        for (name, e) in &self.entries {
            if !known.contains(e.object_name.as_str()) {
                return Err(SymbolTableError::UnknownObject {
                    symbol: name.clone(),
                    object: e.object_name.clone(),
                });
            }
            if let Some(first) = addrs.insert((&e.object_name, e.local_address), name) {
                return Err(SymbolTableError::DuplicateAddress {
                    object: e.object_name.clone(),
                    addr: e.local_address,
                    first: first.to_string(),
                    second: name.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Symbols of one object, in address order.
    pub fn object_symbols<'a>(&'a self, object: &'a str) -> impl Iterator<Item = (&'a str, &'a SymbolEntry)> + 'a {
        let mut v: Vec<_> = self
            .entries
            .iter()
            .filter(move |(_, e)| e.object_name == object)
            .map(|(n, e)| (n.as_str(), e))
            .collect();
        v.sort_by_key(|(_, e)| e.local_address);
        v.into_iter()
    }
}

/// Graph functions with no symbol in any object.
pub fn infer_inlined(graph: &CallGraph, symbols: &SymbolTable) -> NameSet {
    graph
        .names()
        .filter(|n| !symbols.contains(n))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Compensation {
    pub selection: SelectionSet,
    /// Callers newly brought into the selection.
    pub added: NameSet,
    /// Selected inlined functions that were removed.
    pub removed: NameSet,
    /// Removed functions for which no non-inlined caller exists.
    pub dropped: NameSet,
}

/// Replaces selected inlined functions with their first non-inlined callers.
///
/// Every caller chain above an inlined function is followed until it hits a
/// non-inlined function, which is added. Chains that only loop through
/// inlined functions contribute nothing; if no chain yields a caller the
/// function is listed in `dropped`.
pub fn compensate_inlining(graph: &CallGraph, selection: &SelectionSet, inlined: &NameSet) -> Compensation {
    let mut result: NameSet = selection.functions.difference(inlined).cloned().collect();
    let mut added = NameSet::new();
    let mut dropped = NameSet::new();
    let removed: NameSet = selection.functions.intersection(inlined).cloned().collect();

    for f in &removed {
        let callers = first_non_inlined_callers(graph, f, inlined);
        if callers.is_empty() {
            log::warn!("inlined function `{f}` has no non-inlined caller; it will not be measured");
            dropped.insert(f.clone());
        }
        for c in callers {
            if !selection.functions.contains(&c) {
                added.insert(c.clone());
            }
            result.insert(c);
        }
    }

    Compensation {
        selection: SelectionSet::new(result, selection.source_instance.clone()),
        added,
        removed,
        dropped,
    }
}

fn first_non_inlined_callers(graph: &CallGraph, start: &str, inlined: &NameSet) -> BTreeSet<String> {
    let mut found = BTreeSet::new();
    let mut visited: HashSet<&str> = HashSet::from([start]);
    let mut queue: VecDeque<&str> = VecDeque::from([start]);
    while let Some(cur) = queue.pop_front() {
        for caller in graph.callers(cur) {
            if !visited.insert(caller) {
                continue;
            }
            if inlined.contains(caller) {
                queue.push_back(caller);
            } else {
                found.insert(caller.to_string());
            }
        }
    }
    found
}

/// Counts before and after post-processing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    #[serde(rename = "selectedPre")]
    pub selected_pre: usize,
    pub selected: usize,
    pub added: usize,
    #[serde(rename = "elapsedSeconds", serialize_with = "ser_secs")]
    pub elapsed: Duration,
    #[serde(rename = "graphSize", skip_serializing_if = "Option::is_none")]
    pub graph_size: Option<usize>,
}

fn ser_secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// `post` is the selection with inlined members removed, before compensation adds callers.
pub fn build_report(
    pre: &SelectionSet,
    post: &SelectionSet,
    added: &NameSet,
    elapsed: Duration,
    graph: Option<&CallGraph>,
) -> SelectionReport {
    SelectionReport {
        selected_pre: pre.len(),
        selected: post.len(),
        added: added.len(),
        elapsed,
        graph_size: graph.map(CallGraph::len),
    }
}

impl SelectionReport {
    fn cell(&self, n: usize) -> String {
        match self.graph_size {
            Some(total) if total > 0 => format!("{n} ({:.1}%)", 100.0 * n as f64 / total as f64),
            _ => n.to_string(),
        }
    }

    pub fn to_text(&self) -> String {
        let time = format!("{:.3}s", self.elapsed.as_secs_f64());
        let cols = [
            ("Time", time),
            ("#selected_pre", self.cell(self.selected_pre)),
            ("#selected", self.cell(self.selected)),
            ("#added", self.added.to_string()),
        ];
        let mut header = String::new();
        let mut row = String::new();
        for (i, (h, v)) in cols.iter().enumerate() {
            let w = h.len().max(v.len());
            let sep = if i + 1 == cols.len() { "" } else { "  " };
            let _ = write!(header, "{h:<w$}{sep}");
            let _ = write!(row, "{v:<w$}{sep}");
        }
        format!("{}\n{}\n", header.trim_end(), row.trim_end())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}
