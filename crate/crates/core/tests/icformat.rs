use std::collections::BTreeMap;

use capi_core::icformat::{
    emit_native_ic, emit_scorep_filter, load_ic, parse_ic, parse_native_ic, parse_scorep_filter, IcError,
    InstrumentationConfig, Origin,
};
use capi_core::patchrt::PackedFunctionId;
use proptest::prelude::*;

fn ic(names: &[&str]) -> InstrumentationConfig {
    InstrumentationConfig::from_names(names.iter().copied()).unwrap()
}

#[test]
fn filter_block_layout() {
    let text = emit_scorep_filter(&ic(&["foo", "bar"]), None);
    assert_eq!(
        text,
        "SCOREP_REGION_NAMES_BEGIN\n  EXCLUDE *\n  INCLUDE foo\n  INCLUDE bar\nSCOREP_REGION_NAMES_END\n"
    );
    assert_eq!(
        emit_scorep_filter(&ic(&[]), None),
        "SCOREP_REGION_NAMES_BEGIN\n  EXCLUDE *\nSCOREP_REGION_NAMES_END\n"
    );
    assert_eq!(parse_scorep_filter(&text).unwrap(), ic(&["foo", "bar"]));
}

#[test]
fn special_characters_round_trip() {
    let weird = ic(&["operator*", "a b", "x#y", "f?[1]", "back\\slash", "MANGLED"]);
    let text = emit_scorep_filter(&weird, None);
    assert!(text.contains("INCLUDE operator\\*"));
    assert_eq!(parse_scorep_filter(&text).unwrap(), weird);
}

#[test]
fn filter_errors_and_comments() {
    let no_end = "SCOREP_REGION_NAMES_BEGIN\n  EXCLUDE *\n  INCLUDE foo\n";
    assert!(parse_scorep_filter(no_end).is_err());
    let wildcard = "SCOREP_REGION_NAMES_BEGIN\n  EXCLUDE *\n  INCLUDE foo*\nSCOREP_REGION_NAMES_END\n";
    assert!(matches!(parse_scorep_filter(wildcard), Err(IcError::Wildcard { line: 3, .. })));
    let commented =
        "# generated\nSCOREP_REGION_NAMES_BEGIN\n  # keep\n  EXCLUDE *\n  INCLUDE MANGLED foo # foo()\nSCOREP_REGION_NAMES_END\n";
    assert_eq!(parse_scorep_filter(commented).unwrap(), ic(&["foo"]));
}

#[test]
fn native_examples() {
    assert_eq!(emit_native_ic(&ic(&[])), r#"{"version":1,"include":[]}"#);
    assert!(parse_native_ic(r#"{"version":1,"include":[]}"#).unwrap().is_empty());
    let mut with_hint = ic(&["foo"]);
    with_hint.id_hints.insert("foo".into(), PackedFunctionId::pack(1, 5).unwrap());
    let text = emit_native_ic(&with_hint);
    assert!(text.contains("16777221"));
    assert_eq!(parse_native_ic(&text).unwrap(), with_hint);
    assert!(matches!(
        parse_native_ic(r#"{"version":9,"include":[]}"#),
        Err(IcError::Version { .. })
    ));
    assert!(parse_native_ic(r#"{"version":1,"include":["a","a"]}"#).is_err());
}

#[test]
fn sniffing_and_loading() {
    let dir = tempfile::tempdir().unwrap();
    let native = dir.path().join("ic.json");
    let filter = dir.path().join("ic.filter");
    std::fs::write(&native, emit_native_ic(&ic(&["a"]))).unwrap();
    std::fs::write(&filter, emit_scorep_filter(&ic(&["b"]), None)).unwrap();
    assert_eq!(load_ic(&native).unwrap(), ic(&["a"]));
    assert_eq!(load_ic(&filter).unwrap(), ic(&["b"]));
    assert_eq!(parse_ic("  {\"version\":1,\"include\":[\"c\"]}").unwrap(), ic(&["c"]));
    assert!(load_ic(dir.path().join("missing")).is_err());
}

fn name_strategy() -> impl Strategy<Value = String> {
    "[A-Za-z_:~<>*?# \\[\\]\\\\]{1,12}".prop_filter("no leading/trailing blanks", |s| s.trim() == s)
}

fn ic_strategy() -> impl Strategy<Value = InstrumentationConfig> {
    prop::collection::btree_set(name_strategy(), 0..20).prop_flat_map(|set| {
        let names: Vec<String> = set.into_iter().collect();
        let n = names.len();
        (
            Just(names).prop_shuffle(),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(prop::option::of(any::<u32>()), n),
        )
            .prop_map(|(names, origins, hints)| {
                let mut ic = InstrumentationConfig {
                    include: names.clone(),
                    origin: BTreeMap::new(),
                    id_hints: BTreeMap::new(),
                };
                for (i, name) in names.iter().enumerate() {
                    let o = if origins[i] { Origin::Pipeline } else { Origin::Compensation };
                    ic.origin.insert(name.clone(), o);
                    if let Some(h) = hints[i] {
                        ic.id_hints.insert(name.clone(), PackedFunctionId::from_raw(h));
                    }
                }
                ic
            })
    })
}

proptest! {
    #[test]
    fn native_round_trip_is_exact(ic in ic_strategy()) {
        let text = emit_native_ic(&ic);
        prop_assert_eq!(parse_native_ic(&text).unwrap(), ic.clone());
        prop_assert_eq!(emit_native_ic(&ic), text);
    }

    #[test]
    fn filter_round_trip_keeps_names(ic in ic_strategy()) {
        let text = emit_scorep_filter(&ic, None);
        prop_assert_eq!(parse_scorep_filter(&text).unwrap(), ic.names_only());
        prop_assert_eq!(parse_ic(&text).unwrap(), ic.names_only());
    }
}
