//! Independent oracles and random generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use capi_core::callgraph::{CallGraph, FunctionNode};
use capi_core::spec::{Argument, SelectorInstance, SelectorKind, SelectorPipeline, SelectorRef};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

pub type Names = BTreeSet<String>;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn names(items: &[&str]) -> Names {
    items.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------------------
// Graphs

/// Random graph with `n` nodes `f0..`, node 0 named `main`. With `acyclic`
/// edges only go from lower to higher index.
pub fn random_graph(r: &mut impl Rng, n: usize, edge_p: f64, acyclic: bool) -> CallGraph {
    let name = |i: usize| if i == 0 { "main".to_string() } else { format!("f{i}") };
    let mut nodes = Vec::new();
    for i in 0..n {
        let mut node = FunctionNode::new(name(i));
        node.num_statements = r.gen_range(0..50);
        node.flops = r.gen_range(0..40);
        node.max_loop_depth = r.gen_range(0..4);
        node.is_inline_marked = r.gen_bool(0.2);
        node.in_system_header = r.gen_bool(0.15);
        node.is_virtual = r.gen_bool(0.1);
        if r.gen_bool(0.3) {
            node.demangled_name = Some(format!("ns::{}()", name(i)));
        }
        for j in 0..n {
            let allowed = if acyclic { j > i } else { true };
            if allowed && r.gen_bool(edge_p) {
                node.callees.insert(name(j));
            }
        }
        nodes.push(node);
    }
    CallGraph::from_nodes(nodes).expect("generated graph is consistent")
}

pub fn random_subset(r: &mut impl Rng, g: &CallGraph, p: f64) -> Names {
    g.names().filter(|_| r.gen_bool(p)).map(str::to_string).collect()
}

/// Transitive closure by Warshall's algorithm; `reach[i][j]` iff a path of
/// length >= 0 leads from i to j.
pub struct Closure {
    pub names: Vec<String>,
    index: BTreeMap<String, usize>,
    pub reach: Vec<Vec<bool>>,
}

impl Closure {
    pub fn new(g: &CallGraph) -> Self {
        Self::restricted(g, |_| true)
    }

    /// Closure over the subgraph induced by nodes satisfying `keep`.
    pub fn restricted(g: &CallGraph, keep: impl Fn(&str) -> bool) -> Self {
        let names: Vec<String> = g.names().map(str::to_string).collect();
        let index: BTreeMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let n = names.len();
        let mut reach = vec![vec![false; n]; n];
        for (i, a) in names.iter().enumerate() {
            reach[i][i] = true;
            if !keep(a) {
                continue;
            }
            for b in g.callees(a) {
                if keep(b) {
                    reach[i][index[b]] = true;
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    let row_k = reach[k].clone();
                    for (cell, via) in reach[i].iter_mut().zip(row_k) {
                        *cell |= via;
                    }
                }
            }
        }
        Closure { names, index, reach }
    }

    pub fn reaches(&self, a: &str, b: &str) -> bool {
        self.reach[self.index[a]][self.index[b]]
    }

    pub fn forward(&self, roots: &Names) -> Names {
        self.names
            .iter()
            .filter(|n| roots.iter().any(|r| self.reaches(r, n)))
            .cloned()
            .collect()
    }

    pub fn backward(&self, targets: &Names) -> Names {
        self.names
            .iter()
            .filter(|n| targets.iter().any(|t| self.reaches(n, t)))
            .cloned()
            .collect()
    }
}

pub fn entry_points(g: &CallGraph) -> Names {
    g.nodes()
        .filter(|n| n.name == "main" || g.nodes().all(|m| !m.callees.contains(&n.name)))
        .map(|n| n.name.clone())
        .collect()
}

/// Nodes on some simple path from an entry point to a target, found by
/// enumerating all simple paths with DFS.
pub fn on_path_by_enumeration(g: &CallGraph, targets: &Names) -> Names {
    fn dfs<'g>(g: &'g CallGraph, cur: &'g str, path: &mut Vec<&'g str>, targets: &Names, out: &mut Names) {
        path.push(cur);
        if targets.contains(cur) {
            out.extend(path.iter().map(|s| s.to_string()));
        }
        for next in g.callees(cur) {
            if !path.contains(&next) {
                dfs(g, next, path, targets, out);
            }
        }
        path.pop();
    }
    let mut out = Names::new();
    for e in entry_points(g) {
        let e = g.get(&e).map(|n| n.name.as_str()).expect("entry exists");
        dfs(g, e, &mut Vec::new(), targets, &mut out);
    }
    out
}

/// Nodes removed by coarse selection: reachable from an entry point, with a
/// selected, reachable caller that is their only caller other than themselves.
pub fn coarse_oracle(g: &CallGraph, selected: &Names, critical: &Names) -> Names {
    let closure = Closure::new(g);
    let reachable = closure.forward(&entry_points(g));
    selected
        .iter()
        .filter(|v| {
            if critical.contains(*v) {
                return false;
            }
            let callers: Vec<&str> = g
                .nodes()
                .filter(|u| u.name != **v && u.callees.contains(*v))
                .map(|u| u.name.as_str())
                .collect();
            callers.len() == 1 && selected.contains(callers[0]) && reachable.contains(callers[0])
        })
        .fold(selected.clone(), |mut acc, v| {
            acc.remove(v);
            acc
        })
}

/// Non-inlined functions from which `f` is reached through inlined
/// functions only (or directly).
pub fn minimal_non_inlined_ancestors(g: &CallGraph, f: &str, inlined: &Names) -> Names {
    let inner = Closure::restricted(g, |n| inlined.contains(n));
    g.nodes()
        .filter(|a| !inlined.contains(&a.name))
        .filter(|a| a.callees.iter().any(|h| h == f || (inlined.contains(h) && inner.reaches(h, f))))
        .map(|a| a.name.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// Selector pipelines

/// Evaluates a pipeline node by node: every filter kind is a per-node
/// predicate, set kinds are plain set algebra, reachability goes through
/// the Warshall closure. Instances are re-evaluated on every reference.
pub struct BruteEvaluator<'a> {
    pipeline: &'a SelectorPipeline,
    graph: &'a CallGraph,
    closure: Closure,
}

impl<'a> BruteEvaluator<'a> {
    pub fn new(pipeline: &'a SelectorPipeline, graph: &'a CallGraph) -> Self {
        BruteEvaluator {
            pipeline,
            graph,
            closure: Closure::new(graph),
        }
    }

    pub fn entry(&self) -> Names {
        self.instance(self.pipeline.instances.len() - 1)
    }

    pub fn instance(&self, idx: usize) -> Names {
        self.eval(&self.pipeline.instances[idx], idx)
    }

    fn universe(&self) -> Names {
        self.graph.names().map(str::to_string).collect()
    }

    fn resolve(&self, r: &SelectorRef, before: usize) -> Names {
        match r {
            SelectorRef::Universe => self.universe(),
            SelectorRef::Named(n) => {
                let idx = self.pipeline.instances[..before]
                    .iter()
                    .rposition(|i| i.name.as_deref() == Some(n.as_str()))
                    .expect("reference resolves backwards");
                self.instance(idx)
            }
            SelectorRef::Inline(inst) => self.eval(inst, before),
        }
    }

    fn sel(&self, inst: &SelectorInstance, i: usize, before: usize) -> Names {
        match &inst.args[i] {
            Argument::Selector(r) => self.resolve(r, before),
            other => panic!("argument {i} is not a selector: {other:?}"),
        }
    }

    fn cmp(&self, inst: &SelectorInstance, value: u64) -> bool {
        let (Argument::Op(op), Argument::Int(n)) = (&inst.args[0], &inst.args[1]) else {
            panic!("bad comparison arguments")
        };
        let v = value as i64;
        match op.as_str() {
            ">=" => v >= *n,
            "<=" => v <= *n,
            ">" => v > *n,
            "<" => v < *n,
            "==" => v == *n,
            other => panic!("unknown operator {other}"),
        }
    }

    fn filter(&self, input: Names, keep: impl Fn(&FunctionNode) -> bool) -> Names {
        input.into_iter().filter(|n| keep(self.graph.get(n).unwrap())).collect()
    }

    fn eval(&self, inst: &SelectorInstance, before: usize) -> Names {
        match inst.kind {
            SelectorKind::Identity => self.sel(inst, 0, before),
            SelectorKind::Join => {
                let mut out = Names::new();
                for i in 0..inst.args.len() {
                    out.extend(self.sel(inst, i, before));
                }
                out
            }
            SelectorKind::Subtract => {
                let b = self.sel(inst, 1, before);
                self.sel(inst, 0, before).into_iter().filter(|n| !b.contains(n)).collect()
            }
            SelectorKind::InSystemHeader => self.filter(self.sel(inst, 0, before), |f| f.in_system_header),
            SelectorKind::InlineSpecified => self.filter(self.sel(inst, 0, before), |f| f.is_inline_marked),
            SelectorKind::Flops => self.filter(self.sel(inst, 2, before), |f| self.cmp(inst, f.flops)),
            SelectorKind::LoopDepth => self.filter(self.sel(inst, 2, before), |f| self.cmp(inst, f.max_loop_depth)),
            SelectorKind::ByName => {
                let Argument::Str(pat) = &inst.args[0] else { panic!("bad pattern") };
                let re = Regex::new(&format!("^(?:{pat})$")).unwrap();
                self.filter(self.sel(inst, 1, before), |f| {
                    re.is_match(&f.name) || f.demangled_name.as_deref().is_some_and(|d| re.is_match(d))
                })
            }
            SelectorKind::OnCallPathTo => {
                let targets = self.sel(inst, 0, before);
                let within = if inst.args.len() > 1 {
                    self.sel(inst, 1, before)
                } else {
                    self.universe()
                };
                let fwd = self.closure.forward(&entry_points(self.graph));
                let bwd = self.closure.backward(&targets);
                within.into_iter().filter(|n| fwd.contains(n) && bwd.contains(n)).collect()
            }
            SelectorKind::Coarse => {
                let critical = if inst.args.len() > 1 {
                    self.sel(inst, 1, before)
                } else {
                    Names::new()
                };
                coarse_oracle(self.graph, &self.sel(inst, 0, before), &critical)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Traces

/// A call with its children, used to generate well-nested traces whose
/// profile can be computed directly from the tree.
#[derive(Debug, Clone)]
pub struct Call {
    pub name: String,
    pub start: u64,
    pub end: u64,
    pub children: Vec<Call>,
}

impl Call {
    pub fn inclusive(&self) -> u64 {
        self.end - self.start
    }

    pub fn exclusive(&self) -> u64 {
        self.inclusive() - self.children.iter().map(Call::inclusive).sum::<u64>()
    }

    /// Adds (calls, inclusive, exclusive) of this subtree per call path.
    pub fn profile(&self, prefix: &[String], out: &mut BTreeMap<Vec<String>, (u64, u64, u64)>) {
        let mut path = prefix.to_vec();
        path.push(self.name.clone());
        let e = out.entry(path.clone()).or_default();
        e.0 += 1;
        e.1 += self.inclusive();
        e.2 += self.exclusive();
        for c in &self.children {
            c.profile(&path, out);
        }
    }

    pub fn events(&self, thread: u64, out: &mut Vec<String>) {
        out.push(format!("T{thread} enter {} {}", self.name, self.start));
        for c in &self.children {
            c.events(thread, out);
        }
        out.push(format!("T{thread} exit {} {}", self.name, self.end));
    }

    /// Every call in the subtree, outermost first.
    pub fn walk<'a>(&'a self, out: &mut Vec<&'a Call>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

/// Random call forest starting at `t0`; each call lasts at least one tick.
pub fn random_calls(r: &mut impl Rng, pool: &[String], t0: u64, depth: usize, max_children: usize) -> (Vec<Call>, u64) {
    let mut t = t0;
    let mut calls = Vec::new();
    let count = r.gen_range(0..=max_children);
    for _ in 0..count {
        let name = pool.choose(r).expect("non-empty pool").clone();
        t += r.gen_range(0..5);
        let start = t;
        t += r.gen_range(0..3);
        let children = if depth > 0 {
            let (c, end) = random_calls(r, pool, t, depth - 1, max_children);
            t = end;
            c
        } else {
            Vec::new()
        };
        t += r.gen_range(1..6);
        calls.push(Call {
            name,
            start,
            end: t,
            children,
        });
    }
    (calls, t)
}

/// One rooted call tree per thread, interleaved into a single trace.
pub fn random_trace(r: &mut impl Rng, pool: &[String], threads: u64) -> (BTreeMap<u64, Call>, String) {
    let mut roots = BTreeMap::new();
    let mut per_thread: Vec<Vec<String>> = Vec::new();
    for t in 0..threads {
        let (children, end) = random_calls(r, pool, 1, 3, 3);
        let root = Call {
            name: "main".into(),
            start: 0,
            end: end + 1,
            children,
        };
        let mut lines = Vec::new();
        root.events(t, &mut lines);
        per_thread.push(lines);
        roots.insert(t, root);
    }
    // Interleave threads while keeping each thread's order.
    let mut cursors = vec![0usize; per_thread.len()];
    let mut text = String::new();
    loop {
        let open: Vec<usize> = (0..per_thread.len()).filter(|&i| cursors[i] < per_thread[i].len()).collect();
        let Some(&i) = open.choose(r) else { break };
        text.push_str(&per_thread[i][cursors[i]]);
        text.push('\n');
        cursors[i] += 1;
    }
    (roots, text)
}

// ---------------------------------------------------------------------------
// Random pipelines

const PATTERNS: &[&str] = &["main", "f[0-9]", "f1.*", "ns::.*", "(main|f2)", "f\\d+", "a\"b", ".*"];
const OPS: [&str; 5] = [">=", "<=", ">", "<", "=="];

fn random_ref(r: &mut ChaCha8Rng, defined: &[String], depth: usize) -> Argument {
    Argument::Selector(match r.gen_range(0..4) {
        0 if !defined.is_empty() => SelectorRef::Named(defined.choose(r).unwrap().clone()),
        1 if depth > 0 => SelectorRef::Inline(Box::new(random_instance(r, None, defined, depth - 1))),
        _ => SelectorRef::Universe,
    })
}

fn random_op(r: &mut ChaCha8Rng) -> Argument {
    Argument::Op(capi_core::spec::CmpOp::parse(OPS.choose(r).unwrap()).unwrap())
}

fn random_instance(r: &mut ChaCha8Rng, name: Option<String>, defined: &[String], depth: usize) -> SelectorInstance {
    let (kind, args) = match r.gen_range(0..9) {
        0 => {
            let n = r.gen_range(1..4);
            (SelectorKind::Join, (0..n).map(|_| random_ref(r, defined, depth)).collect())
        }
        1 => (SelectorKind::Subtract, vec![random_ref(r, defined, depth), random_ref(r, defined, depth)]),
        2 => (SelectorKind::InSystemHeader, vec![random_ref(r, defined, depth)]),
        3 => (SelectorKind::InlineSpecified, vec![random_ref(r, defined, depth)]),
        4 => (
            SelectorKind::Flops,
            vec![random_op(r), Argument::Int(r.gen_range(-2..40)), random_ref(r, defined, depth)],
        ),
        5 => (
            SelectorKind::LoopDepth,
            vec![random_op(r), Argument::Int(r.gen_range(0..4)), random_ref(r, defined, depth)],
        ),
        6 => (
            SelectorKind::ByName,
            vec![Argument::Str(PATTERNS.choose(r).unwrap().to_string()), random_ref(r, defined, depth)],
        ),
        k => {
            let mut a = vec![random_ref(r, defined, depth)];
            if r.gen_bool(0.5) {
                a.push(random_ref(r, defined, depth));
            }
            let kind = if k == 7 { SelectorKind::OnCallPathTo } else { SelectorKind::Coarse };
            (kind, a)
        }
    };
    SelectorInstance { name, kind, args }
}

/// Valid pipeline of `n` instances; references only point backwards.
pub fn random_pipeline(r: &mut ChaCha8Rng, n: usize) -> SelectorPipeline {
    let mut defined: Vec<String> = Vec::new();
    let mut instances = Vec::new();
    for i in 0..n {
        let name = r.gen_bool(0.7).then(|| format!("s{i}"));
        instances.push(random_instance(r, name.clone(), &defined, 2));
        defined.extend(name);
    }
    SelectorPipeline { instances }
}

// ---------------------------------------------------------------------------
// Object layouts

use capi_core::patchrt::{FunctionImage, ObjectImage, ObjectLayout};

/// Layout with `objects` objects; object 0 starts with `main`. Function
/// names are unique across objects. Some symbols are hidden, some absent.
pub fn random_layout(r: &mut impl Rng, objects: usize, per_object: usize) -> ObjectLayout {
    let mut out = Vec::new();
    let mut k = 0;
    for o in 0..objects {
        let mut functions = Vec::new();
        for i in 0..per_object {
            let name = if o == 0 && i == 0 {
                "main".to_string()
            } else {
                k += 1;
                format!("fn{k}")
            };
            let mut f = FunctionImage::new(name);
            if !(o == 0 && i == 0) {
                f.hidden = r.gen_bool(0.1);
                f.symbol = r.gen_bool(0.9);
            }
            functions.push(f);
        }
        let name = if o == 0 { "app".to_string() } else { format!("lib{o}.so") };
        out.push(ObjectImage::new(name, functions));
    }
    ObjectLayout { objects: out }
}

/// Names that resolve through the symbol table: listed and not hidden.
pub fn resolvable(layout: &ObjectLayout) -> Names {
    layout
        .objects
        .iter()
        .flat_map(|o| o.functions.iter())
        .filter(|f| f.symbol && !f.hidden)
        .map(|f| f.name.clone())
        .collect()
}

pub fn all_functions(layout: &ObjectLayout) -> Vec<String> {
    layout
        .objects
        .iter()
        .flat_map(|o| o.functions.iter())
        .map(|f| f.name.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// Shared fixtures built from random graphs

use capi_core::postprocess::{SymbolEntry, SymbolTable};

/// Symbol table listing every graph node except `missing`.
pub fn symtab_without(g: &CallGraph, missing: &Names) -> SymbolTable {
    let mut t = SymbolTable {
        objects: vec!["app".into()],
        ..Default::default()
    };
    for (i, n) in g.names().filter(|n| !missing.contains(*n)).enumerate() {
        t.entries.insert(
            n.to_string(),
            SymbolEntry {
                object_name: "app".into(),
                local_address: 16 * i as u64,
                hidden: false,
            },
        );
    }
    t
}

/// Evaluates `spec` after binding each named set as a join of exact byName
/// selections.
pub fn eval_with_sets(spec: &str, g: &CallGraph, defs: &[(&str, &Names)]) -> Names {
    let mut text = String::new();
    for (name, set) in defs {
        let members: Vec<String> = set.iter().map(|s| format!("byName(\"{}\", %%)", regex::escape(s))).collect();
        if members.is_empty() {
            text += &format!("{name} = subtract(%%, %%)\n");
        } else {
            text += &format!("{name} = join({})\n", members.join(", "));
        }
    }
    text += spec;
    let p = capi_core::spec::parse_spec(&text, &capi_core::spec::NoImports).unwrap();
    capi_core::selectors::evaluate(&p, g).unwrap().functions
}
