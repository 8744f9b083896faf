//! Evaluation of selector pipelines against a call graph.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use regex::Regex;
use thiserror::Error;

use crate::callgraph::{CallGraph, FunctionNode};
use crate::spec::{Argument, CmpOp, SelectorInstance, SelectorKind, SelectorPipeline, SelectorRef};

pub type NameSet = BTreeSet<String>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("pipeline has no entry instance")]
    Empty,
    #[error("instance {instance}: malformed argument {index} for `{kind}`")]
    MalformedArgument {
        instance: String,
        kind: &'static str,
        index: usize,
    },
    #[error("instance {instance}: `%{name}` does not name an earlier instance")]
    BadReference { instance: String, name: String },
    #[error("instance {instance}: invalid pattern: {msg}")]
    BadPattern { instance: String, msg: String },
}

/// Functions chosen by one selector instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionSet {
    pub functions: NameSet,
    pub source_instance: String,
}

impl SelectionSet {
    pub fn new(functions: NameSet, source_instance: impl Into<String>) -> Self {
        SelectionSet {
            functions,
            source_instance: source_instance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

/// Evaluates the pipeline's entry instance.
pub fn evaluate(pipeline: &SelectorPipeline, graph: &CallGraph) -> Result<SelectionSet, EvalError> {
    let last = pipeline.instances.len().checked_sub(1).ok_or(EvalError::Empty)?;
    let mut ev = Evaluator::new(pipeline, graph);
    let set = ev.instance(last)?;
    Ok(SelectionSet::new(
        (*set).clone(),
        pipeline.instances[last].label(last),
    ))
}

/// Set size of one top-level instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceCount {
    pub label: String,
    pub kind: &'static str,
    pub size: usize,
}

/// Evaluates every top-level instance, in sequence order.
pub fn instances_report(pipeline: &SelectorPipeline, graph: &CallGraph) -> Result<Vec<InstanceCount>, EvalError> {
    let mut ev = Evaluator::new(pipeline, graph);
    (0..pipeline.instances.len())
        .map(|i| {
            let inst = &pipeline.instances[i];
            Ok(InstanceCount {
                label: inst.label(i),
                kind: inst.kind.keyword(),
                size: ev.instance(i)?.len(),
            })
        })
        .collect()
}

/// Memoizing evaluator; each named instance is computed at most once.
pub struct Evaluator<'a> {
    pipeline: &'a SelectorPipeline,
    graph: &'a CallGraph,
    memo: Vec<Option<Arc<NameSet>>>,
    names: HashMap<&'a str, usize>,
    universe: Arc<NameSet>,
}

impl<'a> Evaluator<'a> {
    pub fn new(pipeline: &'a SelectorPipeline, graph: &'a CallGraph) -> Self {
        let mut names = HashMap::new();
        for (i, inst) in pipeline.instances.iter().enumerate() {
            if let Some(n) = &inst.name {
                names.entry(n.as_str()).or_insert(i);
            }
        }
        Evaluator {
            pipeline,
            graph,
            memo: vec![None; pipeline.instances.len()],
            names,
            universe: Arc::new(graph.names().map(str::to_string).collect()),
        }
    }

    pub fn instance(&mut self, idx: usize) -> Result<Arc<NameSet>, EvalError> {
        if let Some(set) = &self.memo[idx] {
            return Ok(set.clone());
        }
        let inst = &self.pipeline.instances[idx];
        let set = Arc::new(self.eval(inst, idx)?);
        self.memo[idx] = Some(set.clone());
        Ok(set)
    }

    fn resolve(&mut self, r: &SelectorRef, owner: usize) -> Result<Arc<NameSet>, EvalError> {
        match r {
            SelectorRef::Universe => Ok(self.universe.clone()),
            SelectorRef::Named(name) => match self.names.get(name.as_str()) {
                Some(&i) if i < owner => self.instance(i),
                _ => Err(EvalError::BadReference {
                    instance: self.pipeline.instances[owner].label(owner),
                    name: name.clone(),
                }),
            },
            SelectorRef::Inline(inner) => Ok(Arc::new(self.eval(inner, owner)?)),
        }
    }

    fn eval(&mut self, inst: &SelectorInstance, owner: usize) -> Result<NameSet, EvalError> {
        let malformed = |index: usize| EvalError::MalformedArgument {
            instance: self.pipeline.instances[owner].label(owner),
            kind: inst.kind.keyword(),
            index,
        };
        let sel = |i: usize| inst.args.get(i).and_then(Argument::as_selector).ok_or_else(|| malformed(i + 1));
        let graph = self.graph;

        let out = match inst.kind {
            SelectorKind::Identity => (*self.resolve(sel(0)?, owner)?).clone(),
            SelectorKind::Join => {
                if inst.args.is_empty() {
                    return Err(malformed(1));
                }
                let mut acc = NameSet::new();
                for i in 0..inst.args.len() {
                    let r = sel(i)?;
                    acc.extend(self.resolve(r, owner)?.iter().cloned());
                }
                acc
            }
            SelectorKind::Subtract => {
                let a = self.resolve(sel(0)?, owner)?;
                let b = self.resolve(sel(1)?, owner)?;
                a.difference(&b).cloned().collect()
            }
            SelectorKind::InSystemHeader => {
                let a = self.resolve(sel(0)?, owner)?;
                filter(graph, &a, |n| n.in_system_header)
            }
            SelectorKind::InlineSpecified => {
                let a = self.resolve(sel(0)?, owner)?;
                filter(graph, &a, |n| n.is_inline_marked)
            }
            SelectorKind::Flops | SelectorKind::LoopDepth => {
                let (op, bound) = match (inst.args.first(), inst.args.get(1)) {
                    (Some(Argument::Op(op)), Some(Argument::Int(n))) => (*op, *n),
                    (Some(Argument::Op(_)), _) => return Err(malformed(2)),
                    _ => return Err(malformed(1)),
                };
                let a = self.resolve(sel(2)?, owner)?;
                let metric = if inst.kind == SelectorKind::Flops {
                    |n: &FunctionNode| n.flops
                } else {
                    |n: &FunctionNode| n.max_loop_depth
                };
                filter(graph, &a, |n| compare(metric(n), op, bound))
            }
            SelectorKind::ByName => {
                let pattern = match inst.args.first() {
                    Some(Argument::Str(s)) => s,
                    _ => return Err(malformed(1)),
                };
                let re = Regex::new(&format!("^(?:{pattern})$")).map_err(|e| EvalError::BadPattern {
                    instance: self.pipeline.instances[owner].label(owner),
                    msg: e.to_string(),
                })?;
                let a = self.resolve(sel(1)?, owner)?;
                filter(graph, &a, |n| {
                    re.is_match(&n.name) || n.demangled_name.as_deref().is_some_and(|d| re.is_match(d))
                })
            }
            SelectorKind::OnCallPathTo => {
                let targets = self.resolve(sel(0)?, owner)?;
                let within = match inst.args.get(1) {
                    Some(_) => self.resolve(sel(1)?, owner)?,
                    None => self.universe.clone(),
                };
                on_call_path_to(graph, &targets, &within)
            }
            SelectorKind::Coarse => {
                let selected = self.resolve(sel(0)?, owner)?;
                let critical = match inst.args.get(1) {
                    Some(_) => self.resolve(sel(1)?, owner)?,
                    None => Arc::new(NameSet::new()),
                };
                coarsen(graph, &selected, &critical)
            }
        };
        Ok(out)
    }
}

fn compare(value: u64, op: CmpOp, bound: i64) -> bool {
    let value = i64::try_from(value).unwrap_or(i64::MAX);
    op.holds(value, bound)
}

fn filter(graph: &CallGraph, input: &NameSet, pred: impl Fn(&FunctionNode) -> bool) -> NameSet {
    input
        .iter()
        .filter(|name| graph.get(name).is_some_and(&pred))
        .cloned()
        .collect()
}

/// Members of `within` that lie on a call path from an entry point to a member of `targets`.
pub fn on_call_path_to(graph: &CallGraph, targets: &NameSet, within: &NameSet) -> NameSet {
    let targets = targets.iter().filter(|t| graph.contains(t));
    let backward = graph.reaching_into(targets).expect("targets filtered to graph nodes");
    let forward = graph
        .reachable_from(graph.entry_points())
        .expect("entry points are graph nodes");
    forward
        .intersection(&backward)
        .filter(|n| within.contains(*n))
        .cloned()
        .collect()
}

/// Visiting order used by [`coarsen_with`]. The result does not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Traversal {
    BreadthFirst,
    DepthFirst,
}

/// Removes sole-caller chain links from `selected`.
///
/// Walks the graph from its entry points. For every visited node `u` in
/// `selected`, each callee `v` whose only caller in the whole graph is `u`
/// (self-calls aside) is dropped unless it is in `critical`. The walk
/// continues below removed nodes; unreachable nodes are never touched.
pub fn coarsen(graph: &CallGraph, selected: &NameSet, critical: &NameSet) -> NameSet {
    coarsen_with(graph, selected, critical, Traversal::BreadthFirst)
}

pub fn coarsen_with(graph: &CallGraph, selected: &NameSet, critical: &NameSet, order: Traversal) -> NameSet {
    let mut result = selected.clone();
    let mut visited: BTreeSet<&str> = BTreeSet::new();
    let mut work: VecDeque<&str> = VecDeque::new();
    for e in graph.entry_points() {
        if visited.insert(e) {
            work.push_back(e);
        }
    }

    while let Some(u) = match order {
        Traversal::BreadthFirst => work.pop_front(),
        Traversal::DepthFirst => work.pop_back(),
    } {
        let Some(node) = graph.get(u) else { continue };
        let u_selected = selected.contains(u);
        for v in &node.callees {
            if v == u {
                continue;
            }
            if u_selected && !critical.contains(v) && sole_caller(graph, v) == Some(u) {
                result.remove(v);
            }
            if visited.insert(v) {
                work.push_back(v);
            }
        }
    }
    result
}

/// The unique caller of `name`, ignoring recursive self-calls.
fn sole_caller<'g>(graph: &'g CallGraph, name: &str) -> Option<&'g str> {
    let mut callers = graph.callers(name).filter(|c| *c != name);
    let first = callers.next()?;
    callers.next().is_none().then_some(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{parse_spec, NoImports};

    fn set(items: &[&str]) -> NameSet {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn chain() -> CallGraph {
        CallGraph::from_edges([], [("main", "a"), ("a", "b"), ("b", "c")]).unwrap()
    }

    fn run(spec: &str, g: &CallGraph) -> NameSet {
        evaluate(&parse_spec(spec, &NoImports).unwrap(), g).unwrap().functions
    }

    #[test]
    fn coarse_chain_keeps_only_root() {
        let g = chain();
        assert_eq!(coarsen(&g, &set(&["main", "a", "b", "c"]), &NameSet::new()), set(&["main"]));
    }

    #[test]
    fn coarse_diamond_keeps_join_point() {
        let g = CallGraph::from_edges([], [("main", "a"), ("main", "b"), ("a", "c"), ("b", "c")]).unwrap();
        assert_eq!(
            coarsen(&g, &set(&["main", "a", "b", "c"]), &NameSet::new()),
            set(&["main", "c"])
        );
    }

    #[test]
    fn coarse_retains_critical() {
        let g = chain();
        assert_eq!(
            coarsen(&g, &set(&["main", "a", "b", "c"]), &set(&["c"])),
            set(&["main", "c"])
        );
    }

    #[test]
    fn coarse_only_prunes_below_selected_callers() {
        // `a` is not selected, so its sole callee `b` survives.
        let g = chain();
        assert_eq!(coarsen(&g, &set(&["main", "b", "c"]), &NameSet::new()), set(&["main", "b"]));
    }

    #[test]
    fn coarse_ignores_self_edges_and_unreachable_nodes() {
        let g = CallGraph::from_edges(["main"], [("main", "f"), ("f", "f"), ("x", "y"), ("y", "y")]).unwrap();
        // `x` has no callers so it is an entry point; `y` is reachable from it.
        assert_eq!(coarsen(&g, &set(&["main", "f", "x", "y"]), &NameSet::new()), set(&["main", "x"]));
        let g = CallGraph::from_edges(["main"], [("a", "b"), ("b", "a")]).unwrap();
        assert_eq!(coarsen(&g, &set(&["main", "a", "b"]), &NameSet::new()), set(&["main", "a", "b"]));
    }

    #[test]
    fn universe_and_subtract() {
        let g = chain();
        assert_eq!(run("x = %%", &g).len(), 4);
        assert!(run("x = subtract(%%, %%)", &g).is_empty());
    }

    #[test]
    fn filters_use_metadata() {
        let mut k = FunctionNode::new("k");
        k.flops = 10;
        k.max_loop_depth = 1;
        let mut s = FunctionNode::new("s");
        s.flops = 9;
        s.max_loop_depth = 2;
        s.in_system_header = true;
        let mut i = FunctionNode::new("_Z1iv");
        i.demangled_name = Some("MPI_like()".into());
        i.is_inline_marked = true;
        let g = CallGraph::from_nodes([k, s, i]).unwrap();
        assert_eq!(run("flops(\">=\", 10, %%)", &g), set(&["k"]));
        assert_eq!(run("flops(\"<\", 10, %%)", &g), set(&["_Z1iv", "s"]));
        assert_eq!(run("loopDepth(\"==\", 2, %%)", &g), set(&["s"]));
        assert_eq!(run("inSystemHeader(%%)", &g), set(&["s"]));
        assert_eq!(run("inlineSpecified(%%)", &g), set(&["_Z1iv"]));
        assert_eq!(run("byName(\"MPI_.*\", %%)", &g), set(&["_Z1iv"]));
        // Patterns match whole names only.
        assert!(run("byName(\"k.\", %%)", &g).is_empty());
    }

    #[test]
    fn call_path_selection() {
        let g = CallGraph::from_edges(
            ["main"],
            [("main", "a"), ("a", "MPI_Send"), ("main", "b"), ("b", "c"), ("d", "MPI_Send")],
        )
        .unwrap();
        assert_eq!(
            run("onCallPathTo(byName(\"MPI_.*\", %%))", &g),
            set(&["main", "a", "MPI_Send", "d"])
        );
        assert_eq!(
            run("onCallPathTo(byName(\"MPI_.*\", %%), subtract(%%, byName(\"d\", %%)))", &g),
            set(&["main", "a", "MPI_Send"])
        );
    }

    #[test]
    fn report_lists_every_instance() {
        let g = chain();
        let p = parse_spec("x = %%\ny = byName(\"a|b\", %x)\nsubtract(%x, %y)", &NoImports).unwrap();
        let rows = instances_report(&p, &g).unwrap();
        let sizes: Vec<_> = rows.iter().map(|r| (r.label.as_str(), r.size)).collect();
        assert_eq!(sizes, [("x", 4), ("y", 2), ("<subtract>#2", 2)]);
        let rows = instances_report(&p, &CallGraph::empty()).unwrap();
        assert!(rows.iter().all(|r| r.size == 0));
    }

    #[test]
    fn hand_built_pipelines_with_bad_refs_fail_cleanly() {
        let p = SelectorPipeline {
            instances: vec![SelectorInstance {
                name: Some("x".into()),
                kind: SelectorKind::Identity,
                args: vec![Argument::Selector(SelectorRef::Named("x".into()))],
            }],
        };
        assert!(matches!(evaluate(&p, &chain()), Err(EvalError::BadReference { .. })));
        assert_eq!(evaluate(&SelectorPipeline::default(), &chain()), Err(EvalError::Empty));
    }
}
