//! Instrumentation configuration files.
//!
//! Two encodings are supported: a Score-P region filter (whitelist form,
//! `EXCLUDE *` followed by one `INCLUDE` per function) and a native JSON
//! document that additionally carries provenance and packed-ID hints.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::callgraph::CallGraph;
use crate::patchrt::PackedFunctionId;

pub const NATIVE_IC_VERSION: u64 = 1;

const BEGIN: &str = "SCOREP_REGION_NAMES_BEGIN";
const END: &str = "SCOREP_REGION_NAMES_END";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IcError {
    #[error("failed to read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("line {line}: {msg}")]
    Filter { line: usize, msg: String },
    #[error("line {line}: wildcard pattern `{pattern}` is not supported")]
    Wildcard { line: usize, pattern: String },
    #[error("unsupported IC version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },
    #[error("malformed IC document: {0}")]
    Malformed(String),
    #[error("duplicate function `{0}`")]
    Duplicate(String),
}

/// Why a function is in the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Pipeline,
    Compensation,
}

/// Ordered list of functions to instrument.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstrumentationConfig {
    pub include: Vec<String>,
    pub origin: BTreeMap<String, Origin>,
    pub id_hints: BTreeMap<String, PackedFunctionId>,
}

impl InstrumentationConfig {
    pub fn from_names<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, IcError> {
        let ic = InstrumentationConfig {
            include: names.into_iter().map(Into::into).collect(),
            ..Default::default()
        };
        ic.validate()?;
        Ok(ic)
    }

    pub fn validate(&self) -> Result<(), IcError> {
        let mut seen = HashSet::new();
        for n in &self.include {
            if !seen.insert(n.as_str()) {
                return Err(IcError::Duplicate(n.clone()));
            }
        }
        for k in self.origin.keys().chain(self.id_hints.keys()) {
            if !seen.contains(k.as_str()) {
                return Err(IcError::Malformed(format!("`{k}` annotated but not included")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.include.len()
    }

    pub fn is_empty(&self) -> bool {
        self.include.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.include.iter().any(|n| n == name)
    }

    /// Same functions, without provenance or ID hints.
    pub fn names_only(&self) -> Self {
        InstrumentationConfig {
            include: self.include.clone(),
            ..Default::default()
        }
    }
}

/// Characters with meaning in filter patterns or comments.
fn needs_escape(c: char) -> bool {
    matches!(c, '\\' | '*' | '?' | '[' | ']' | '#') || c.is_whitespace()
}

fn escape(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for c in name.chars() {
        if needs_escape(c) {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

/// Emits the filter block. With `graph`, demangled names are appended as comments.
pub fn emit_scorep_filter(ic: &InstrumentationConfig, graph: Option<&CallGraph>) -> String {
    let mut out = String::new();
    out.push_str(BEGIN);
    out.push('\n');
    out.push_str("  EXCLUDE *\n");
    for name in &ic.include {
        let _ = write!(out, "  INCLUDE {}", escape(name));
        if let Some(d) = graph.and_then(|g| g.get(name)).and_then(|n| n.demangled_name.as_deref()) {
            let _ = write!(out, " # {}", d.replace('\n', " "));
        }
        out.push('\n');
    }
    out.push_str(END);
    out.push('\n');
    out
}

/// Drops everything from the first unescaped `#`.
fn strip_comment(line: &str) -> &str {
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == '#' {
            return &line[..i];
        }
    }
    line
}

/// Splits on unescaped whitespace and unescapes each word.
/// A word containing an unescaped wildcard is returned with `wild = true`.
fn words(text: &str) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut wild = false;
    let mut started = false;
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                if let Some(n) = chars.next() {
                    cur.push(n);
                } else {
                    cur.push('\\');
                }
                started = true;
            }
            c if c.is_whitespace() => {
                if started {
                    out.push((std::mem::take(&mut cur), wild));
                    wild = false;
                    started = false;
                }
            }
            c => {
                if matches!(c, '*' | '?' | '[' | ']') {
                    wild = true;
                }
                cur.push(c);
                started = true;
            }
        }
    }
    if started {
        out.push((cur, wild));
    }
    out
}

pub fn parse_scorep_filter(text: &str) -> Result<InstrumentationConfig, IcError> {
    #[derive(PartialEq)]
    enum St {
        Before,
        Inside { excluded_all: bool },
        After,
    }
    let mut st = St::Before;
    let mut include = Vec::new();
    let mut seen = HashSet::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let ws = words(strip_comment(raw));
        if ws.is_empty() {
            continue;
        }
        let keyword = ws[0].0.as_str();
        let err = |msg: String| IcError::Filter { line, msg };
        match (&mut st, keyword) {
            (St::Before, BEGIN) if ws.len() == 1 => st = St::Inside { excluded_all: false },
            (St::Before, _) => return Err(err(format!("expected {BEGIN}, found `{keyword}`"))),
            (St::Inside { .. }, END) if ws.len() == 1 => st = St::After,
            (St::Inside { excluded_all }, "EXCLUDE") => {
                let args = skip_mangled(&ws[1..]);
                if *excluded_all || args.len() != 1 || args[0].0 != "*" || !args[0].1 {
                    return Err(IcError::Wildcard {
                        line,
                        pattern: args.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" "),
                    });
                }
                if !include.is_empty() {
                    return Err(err("`EXCLUDE *` must precede INCLUDE lines".into()));
                }
                *excluded_all = true;
            }
            (St::Inside { excluded_all }, "INCLUDE") => {
                if !*excluded_all {
                    return Err(err("INCLUDE before `EXCLUDE *`".into()));
                }
                let args = skip_mangled(&ws[1..]);
                if args.is_empty() {
                    return Err(err("INCLUDE without a function name".into()));
                }
                for (name, wild) in args {
                    if *wild {
                        return Err(IcError::Wildcard {
                            line,
                            pattern: name.clone(),
                        });
                    }
                    if !seen.insert(name.clone()) {
                        return Err(IcError::Duplicate(name.clone()));
                    }
                    include.push(name.clone());
                }
            }
            (St::Inside { .. }, other) => return Err(err(format!("unsupported directive `{other}`"))),
            (St::After, _) => return Err(err(format!("content after {END}"))),
        }
    }

    match st {
        St::After => Ok(InstrumentationConfig {
            include,
            ..Default::default()
        }),
        St::Before => Err(IcError::Filter {
            line: last_line,
            msg: format!("missing {BEGIN}"),
        }),
        St::Inside { .. } => Err(IcError::Filter {
            line: last_line,
            msg: format!("missing {END}"),
        }),
    }
}

/// Drops a leading `MANGLED` keyword, unless it is the only word (then it is a name).
fn skip_mangled(args: &[(String, bool)]) -> &[(String, bool)] {
    match args.first() {
        Some((w, false)) if w == "MANGLED" && args.len() > 1 => &args[1..],
        _ => args,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeDoc {
    version: u64,
    include: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    origin: BTreeMap<String, Origin>,
    #[serde(rename = "idHints", default, skip_serializing_if = "BTreeMap::is_empty")]
    id_hints: BTreeMap<String, u32>,
}

pub fn emit_native_ic(ic: &InstrumentationConfig) -> String {
    let doc = NativeDoc {
        version: NATIVE_IC_VERSION,
        include: ic.include.clone(),
        origin: ic.origin.clone(),
        id_hints: ic.id_hints.iter().map(|(k, v)| (k.clone(), v.raw())).collect(),
    };
    serde_json::to_string(&doc).expect("IC serializes")
}

pub fn parse_native_ic(text: &str) -> Result<InstrumentationConfig, IcError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| IcError::Malformed(e.to_string()))?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(NATIVE_IC_VERSION) => {}
        Some(found) => {
            return Err(IcError::Version {
                found,
                expected: NATIVE_IC_VERSION,
            })
        }
        None => return Err(IcError::Malformed("missing integer `version`".into())),
    }
    let doc: NativeDoc = serde_json::from_value(value).map_err(|e| IcError::Malformed(e.to_string()))?;
    let ic = InstrumentationConfig {
        include: doc.include,
        origin: doc.origin,
        id_hints: doc
            .id_hints
            .into_iter()
            .map(|(k, v)| (k, PackedFunctionId::from_raw(v)))
            .collect(),
    };
    ic.validate()?;
    Ok(ic)
}

/// Parses either encoding, chosen by content.
pub fn parse_ic(text: &str) -> Result<InstrumentationConfig, IcError> {
    if text.trim_start().starts_with('{') {
        parse_native_ic(text)
    } else {
        parse_scorep_filter(text)
    }
}

pub fn load_ic(path: impl AsRef<Path>) -> Result<InstrumentationConfig, IcError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IcError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_ic(&text)
}
