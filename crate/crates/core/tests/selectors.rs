mod support;

use capi_core::callgraph::CallGraph;
use capi_core::selectors::{coarsen, coarsen_with, evaluate, on_call_path_to, Traversal};
use capi_core::spec::{parse_spec, MapResolver, NoImports};
use proptest::prelude::*;
use support::{coarse_oracle, names, on_path_by_enumeration, random_graph, random_subset, rng, Names};

fn eval(spec: &str, g: &CallGraph, defs: &[(&str, &Names)]) -> Names {
    support::eval_with_sets(spec, g, defs)
}

#[test]
fn coarse_hand_traced_examples() {
    let chain = CallGraph::from_edges([], [("main", "a"), ("a", "b"), ("b", "c")]).unwrap();
    let all = names(&["main", "a", "b", "c"]);
    assert_eq!(coarsen(&chain, &all, &Names::new()), names(&["main"]));
    assert_eq!(coarsen(&chain, &all, &names(&["c"])), names(&["main", "c"]));
    let diamond = CallGraph::from_edges([], [("main", "a"), ("main", "b"), ("a", "c"), ("b", "c")]).unwrap();
    assert_eq!(coarsen(&diamond, &all, &Names::new()), names(&["main", "c"]));
}

#[test]
fn coarse_via_spec() {
    let chain = CallGraph::from_edges([], [("main", "a"), ("a", "b"), ("b", "c")]).unwrap();
    let p = parse_spec("crit = byName(\"c\", %%)\ncoarse(%%, %crit)", &NoImports).unwrap();
    assert_eq!(evaluate(&p, &chain).unwrap().functions, names(&["main", "c"]));
}

#[test]
fn recursion_and_unreachable_nodes() {
    // f calls itself and is solely called by main; x is unreachable.
    let g = CallGraph::from_edges(["x"], [("main", "f"), ("f", "f"), ("x", "y"), ("z", "y")]).unwrap();
    let all: Names = g.names().map(str::to_string).collect();
    let out = coarsen(&g, &all, &Names::new());
    assert!(!out.contains("f"));
    assert!(out.contains("y"), "y has two callers");
    // z is an entry point with no callers, so it and x are kept.
    assert!(out.contains("x") && out.contains("z"));
}

#[test]
fn on_call_path_toy() {
    let g = CallGraph::load(support::fixture("toyapp.cg.json")).unwrap();
    let all: Names = g.names().map(str::to_string).collect();
    assert_eq!(
        on_call_path_to(&g, &names(&["MPI_Allreduce"]), &all),
        names(&["MPI_Allreduce", "exchange", "main", "output", "solve"])
    );
    assert_eq!(
        on_call_path_to(&g, &names(&["compute_kernel"]), &all),
        names(&["compute_kernel", "main", "orphan", "solve"])
    );
}

#[test]
fn imported_mpi_module_on_toy_graph() {
    let g = CallGraph::load(support::fixture("toyapp.cg.json")).unwrap();
    let mpi = std::fs::read_to_string(support::fixture("mpi.capi")).unwrap();
    let p = parse_spec("!import(\"mpi.capi\")\n%mpi_comm", &MapResolver::new([("mpi.capi", mpi)])).unwrap();
    assert_eq!(
        evaluate(&p, &g).unwrap().functions,
        names(&["MPI_Allreduce", "exchange", "main", "output", "solve"])
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn set_algebra_laws(seed in any::<u64>(), n in 1usize..50) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 0.08, false);
        let a = random_subset(&mut r, &g, 0.4);
        let b = random_subset(&mut r, &g, 0.4);
        let c = random_subset(&mut r, &g, 0.4);
        let defs = [("a", &a), ("b", &b), ("c", &c)];
        let ab = eval("join(%a, %b)", &g, &defs);
        prop_assert_eq!(&ab, &eval("join(%b, %a)", &g, &defs));
        prop_assert_eq!(eval("join(join(%a, %b), %c)", &g, &defs), eval("join(%a, join(%b, %c))", &g, &defs));
        prop_assert_eq!(eval("join(%a, %a)", &g, &defs), a.clone());
        prop_assert!(eval("subtract(%a, %a)", &g, &defs).is_empty());
        prop_assert_eq!(eval("subtract(%a, subtract(%%, %%))", &g, &defs), a.clone());
        let diff: Names = a.difference(&b).cloned().collect();
        prop_assert_eq!(eval("subtract(%a, %b)", &g, &defs), diff);
        prop_assert_eq!(ab, a.union(&b).cloned().collect::<Names>());
    }

    #[test]
    fn filters_are_intersective(seed in any::<u64>(), n in 1usize..50) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 0.08, false);
        let a = random_subset(&mut r, &g, 0.5);
        let defs = [("a", &a)];
        for spec in [
            "inSystemHeader(%a)",
            "inlineSpecified(%a)",
            "flops(\">=\", 10, %a)",
            "loopDepth(\"<\", 2, %a)",
            "byName(\"f1.*\", %a)",
            "onCallPathTo(%%, %a)",
            "coarse(%a)",
        ] {
            let out = eval(spec, &g, &defs);
            prop_assert!(out.is_subset(&a), "{} not intersective", spec);
        }
    }

    #[test]
    fn on_call_path_matches_path_enumeration(seed in any::<u64>(), n in 1usize..=10) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 0.3, true);
        let targets = random_subset(&mut r, &g, 0.3);
        let all: Names = g.names().map(str::to_string).collect();
        prop_assert_eq!(on_call_path_to(&g, &targets, &all), on_path_by_enumeration(&g, &targets));
    }

    #[test]
    fn coarse_traversal_order_and_idempotence(seed in any::<u64>(), n in 1usize..50) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 0.06, false);
        let sel = random_subset(&mut r, &g, 0.6);
        let crit = random_subset(&mut r, &g, 0.1);
        let bfs = coarsen_with(&g, &sel, &crit, Traversal::BreadthFirst);
        let dfs = coarsen_with(&g, &sel, &crit, Traversal::DepthFirst);
        prop_assert_eq!(&bfs, &dfs);
        prop_assert!(bfs.is_subset(&sel));
        prop_assert_eq!(&bfs, &coarse_oracle(&g, &sel, &crit));
        prop_assert!(crit.intersection(&sel).all(|c| bfs.contains(c)));
        prop_assert_eq!(coarsen(&g, &bfs, &crit), bfs.clone());
        let full: Names = g.names().map(str::to_string).collect();
        let once = coarsen(&g, &full, &crit);
        prop_assert_eq!(coarsen(&g, &once, &crit), once);
    }
}
