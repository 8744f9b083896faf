//! Whole-program call graph with per-function static metadata.
//!
//! Graphs are ingested from a versioned JSON export (one entry per function
//! with its callees); caller sets are always derived from the callee sets so
//! the two directions stay consistent.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Schema version written to and accepted from `_meta.version`.
pub const CG_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum CallGraphError {
    #[error("failed to read call graph {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed call graph: {0}")]
    Parse(String),
    #[error("unsupported call graph schema version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },
    #[error("duplicate function node `{0}`")]
    DuplicateNode(String),
    #[error("unresolved callee(s): {}", .0.join(", "))]
    DanglingEdges(Vec<String>),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
}

/// A function and its static metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FunctionNode {
    pub name: String,
    pub demangled_name: Option<String>,
    pub num_statements: u64,
    pub flops: u64,
    pub max_loop_depth: u64,
    pub is_inline_marked: bool,
    pub in_system_header: bool,
    pub is_virtual: bool,
    pub callees: BTreeSet<String>,
    pub callers: BTreeSet<String>,
}

impl FunctionNode {
    pub fn new(name: impl Into<String>) -> Self {
        FunctionNode {
            name: name.into(),
            ..Default::default()
        }
    }

    /// Name used for display: the demangled form when known.
    pub fn display_name(&self) -> &str {
        self.demangled_name.as_deref().unwrap_or(&self.name)
    }
}

/// Immutable-after-construction call graph. Cycles are allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallGraph {
    nodes: BTreeMap<String, FunctionNode>,
    entry_points: BTreeSet<String>,
}

impl CallGraph {
    pub fn empty() -> Self {
        CallGraph::default()
    }

    /// Builds a graph from nodes whose callee sets are authoritative.
    ///
    /// Any caller sets on the input are discarded and re-derived.
    pub fn from_nodes(nodes: impl IntoIterator<Item = FunctionNode>) -> Result<Self, CallGraphError> {
        let mut map = BTreeMap::new();
        for mut node in nodes {
            node.callers.clear();
            if map.contains_key(&node.name) {
                return Err(CallGraphError::DuplicateNode(node.name));
            }
            map.insert(node.name.clone(), node);
        }

        let dangling: BTreeSet<String> = map
            .values()
            .flat_map(|n| n.callees.iter())
            .filter(|c| !map.contains_key(*c))
            .cloned()
            .collect();
        if !dangling.is_empty() {
            return Err(CallGraphError::DanglingEdges(dangling.into_iter().collect()));
        }

        let mut graph = CallGraph {
            nodes: map,
            entry_points: BTreeSet::new(),
        };
        graph.derive_callers();
        Ok(graph)
    }

    /// Convenience for tests and fixtures: `edges` are (caller, callee) pairs,
    /// and every mentioned name becomes a node with default metadata.
    pub fn from_edges<'a>(
        names: impl IntoIterator<Item = &'a str>,
        edges: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, CallGraphError> {
        let mut nodes: BTreeMap<String, FunctionNode> = BTreeMap::new();
        for n in names {
            nodes.entry(n.to_string()).or_insert_with(|| FunctionNode::new(n));
        }
        for (from, to) in edges {
            nodes.entry(to.to_string()).or_insert_with(|| FunctionNode::new(to));
            nodes
                .entry(from.to_string())
                .or_insert_with(|| FunctionNode::new(from))
                .callees
                .insert(to.to_string());
        }
        CallGraph::from_nodes(nodes.into_values())
    }

    fn derive_callers(&mut self) {
        for node in self.nodes.values_mut() {
            node.callers.clear();
        }
        let edges: Vec<(String, String)> = self
            .nodes
            .values()
            .flat_map(|n| n.callees.iter().map(move |c| (n.name.clone(), c.clone())))
            .collect();
        for (from, to) in edges {
            if let Some(callee) = self.nodes.get_mut(&to) {
                callee.callers.insert(from);
            }
        }
        self.entry_points = self
            .nodes
            .values()
            .filter(|n| n.callers.is_empty() || n.name == "main")
            .map(|n| n.name.clone())
            .collect();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.values().map(|n| n.callees.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&FunctionNode> {
        self.nodes.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.nodes.contains_key(name)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &FunctionNode> {
        self.nodes.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn entry_points(&self) -> &BTreeSet<String> {
        &self.entry_points
    }

    pub fn callees(&self, name: &str) -> impl Iterator<Item = &str> {
        self.nodes
            .get(name)
            .into_iter()
            .flat_map(|n| n.callees.iter().map(String::as_str))
    }

    pub fn callers(&self, name: &str) -> impl Iterator<Item = &str> {
        self.nodes
            .get(name)
            .into_iter()
            .flat_map(|n| n.callers.iter().map(String::as_str))
    }

    /// All nodes reachable from `roots` along callee edges, roots included.
    pub fn reachable_from<S: AsRef<str>>(
        &self,
        roots: impl IntoIterator<Item = S>,
    ) -> Result<BTreeSet<String>, CallGraphError> {
        self.closure(roots, |n| &n.callees)
    }

    /// All nodes from which some member of `targets` is reachable, targets included.
    pub fn reaching_into<S: AsRef<str>>(
        &self,
        targets: impl IntoIterator<Item = S>,
    ) -> Result<BTreeSet<String>, CallGraphError> {
        self.closure(targets, |n| &n.callers)
    }

    fn closure<S: AsRef<str>>(
        &self,
        start: impl IntoIterator<Item = S>,
        next: impl Fn(&FunctionNode) -> &BTreeSet<String>,
    ) -> Result<BTreeSet<String>, CallGraphError> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        for s in start {
            let s = s.as_ref();
            if !self.nodes.contains_key(s) {
                return Err(CallGraphError::UnknownFunction(s.to_string()));
            }
            if seen.insert(s.to_string()) {
                queue.push_back(s.to_string());
            }
        }
        while let Some(cur) = queue.pop_front() {
            for n in next(&self.nodes[&cur]) {
                if seen.insert(n.clone()) {
                    queue.push_back(n.clone());
                }
            }
        }
        Ok(seen)
    }

    /// Unions two graphs. Shared names merge callee sets, take the maximum of
    /// numeric metadata and OR the boolean flags.
    pub fn merge(&self, other: &CallGraph) -> CallGraph {
        let mut nodes = self.nodes.clone();
        for (name, theirs) in &other.nodes {
            match nodes.get_mut(name) {
                None => {
                    nodes.insert(name.clone(), theirs.clone());
                }
                Some(ours) => {
                    // Conflicting demangled names: keep the smaller so merge commutes.
                    ours.demangled_name = match (ours.demangled_name.take(), &theirs.demangled_name) {
                        (Some(a), Some(b)) => Some(a.min(b.clone())),
                        (a, b) => a.or_else(|| b.clone()),
                    };
                    ours.num_statements = ours.num_statements.max(theirs.num_statements);
                    ours.flops = ours.flops.max(theirs.flops);
                    ours.max_loop_depth = ours.max_loop_depth.max(theirs.max_loop_depth);
                    ours.is_inline_marked |= theirs.is_inline_marked;
                    ours.in_system_header |= theirs.in_system_header;
                    ours.is_virtual |= theirs.is_virtual;
                    ours.callees.extend(theirs.callees.iter().cloned());
                }
            }
        }
        let mut merged = CallGraph {
            nodes,
            entry_points: BTreeSet::new(),
        };
        merged.derive_callers();
        merged
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CallGraphError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CallGraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CallGraphError> {
        let doc: CgDocument = serde_json::from_str(text).map_err(|e| CallGraphError::Parse(e.to_string()))?;
        if doc.meta.version != CG_SCHEMA_VERSION {
            return Err(CallGraphError::Version {
                found: doc.meta.version,
                expected: CG_SCHEMA_VERSION,
            });
        }
        for key in doc.extra.keys() {
            log::warn!("call graph: ignoring unknown top-level key `{key}`");
        }
        let mut nodes = Vec::with_capacity(doc.functions.0.len());
        for (name, f) in doc.functions.0 {
            for key in f.extra.keys() {
                log::warn!("call graph: ignoring unknown key `{key}` on `{name}`");
            }
            nodes.push(FunctionNode {
                name,
                demangled_name: f.demangled,
                num_statements: f.num_statements,
                flops: f.flops,
                max_loop_depth: f.loop_depth,
                is_inline_marked: f.is_inline,
                in_system_header: f.system_header,
                is_virtual: f.is_virtual,
                callees: f.callees.into_iter().collect(),
                callers: BTreeSet::new(),
            });
        }
        CallGraph::from_nodes(nodes)
    }

    pub fn to_json(&self) -> String {
        let functions = self
            .nodes
            .values()
            .map(|n| {
                (
                    n.name.clone(),
                    CgFunction {
                        demangled: n.demangled_name.clone(),
                        num_statements: n.num_statements,
                        flops: n.flops,
                        loop_depth: n.max_loop_depth,
                        is_inline: n.is_inline_marked,
                        system_header: n.in_system_header,
                        is_virtual: n.is_virtual,
                        callees: n.callees.iter().cloned().collect(),
                        extra: BTreeMap::new(),
                    },
                )
            })
            .collect::<Vec<_>>();
        let doc = CgDocument {
            meta: CgMeta {
                version: CG_SCHEMA_VERSION,
            },
            functions: FunctionMap(functions),
            extra: BTreeMap::new(),
        };
        serde_json::to_string_pretty(&doc).expect("call graph serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct CgDocument {
    #[serde(rename = "_meta")]
    meta: CgMeta,
    functions: FunctionMap,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct CgMeta {
    version: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CgFunction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    demangled: Option<String>,
    #[serde(default)]
    num_statements: u64,
    #[serde(default)]
    flops: u64,
    #[serde(default)]
    loop_depth: u64,
    #[serde(default)]
    is_inline: bool,
    #[serde(default)]
    system_header: bool,
    #[serde(default)]
    is_virtual: bool,
    #[serde(default)]
    callees: Vec<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

/// Ordered function table that rejects duplicate keys instead of letting the
/// last one win, which a plain map would do silently.
struct FunctionMap(Vec<(String, CgFunction)>);

impl Serialize for FunctionMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FunctionMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl<'de> serde::de::Visitor<'de> for Visitor {
            type Value = FunctionMap;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a map of function names to function records")
            }
            fn visit_map<A: serde::de::MapAccess<'de>>(self, mut access: A) -> Result<FunctionMap, A::Error> {
                let mut seen = BTreeSet::new();
                let mut out = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, CgFunction>()? {
                    if !seen.insert(k.clone()) {
                        return Err(serde::de::Error::custom(format!("duplicate function node `{k}`")));
                    }
                    out.push((k, v));
                }
                Ok(FunctionMap(out))
            }
        }
        d.deserialize_map(Visitor)
    }
}
