//! C ABI over `capi-core`.
//!
//! Every function returns a [`CapiStatus`]. On failure the message is kept
//! per thread and read with [`capi_last_error`]. Handles are opaque and must
//! be released with their matching `*_free` function. Strings returned to
//! the caller are released with [`capi_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use capi_core::callgraph::CallGraph;
use capi_core::cli::select;
use capi_core::icformat::{emit_native_ic, emit_scorep_filter, load_ic, parse_ic, InstrumentationConfig};
use capi_core::patchrt::{
    registry_from_layout, EventHandler, EventKind, FunctionEvent, ObjectLayout, PackedFunctionId, RegistryOptions,
    RuntimeRegistry,
};
use capi_core::selectors::SelectionSet;
use capi_core::spec::{parse_spec_file, parse_spec_named, FsResolver, SelectorPipeline};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapiStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Evaluation = 5,
    Registry = 6,
    OutOfRange = 7,
    NotFound = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapiIcFormat {
    ScorepFilter = 0,
    Native = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapiEventKind {
    Entry = 0,
    Exit = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CapiPatchSummary {
    pub patched: usize,
    pub not_found: usize,
    pub skipped_unresolved: usize,
}

/// Called for every event that passes a patched sled. May run on any thread.
pub type CapiEventCallback =
    Option<unsafe extern "C" fn(user_data: *mut c_void, id: u32, kind: CapiEventKind, thread: u64, timestamp: u64)>;

pub struct CapiCallGraph(CallGraph);
pub struct CapiPipeline(SelectorPipeline);
pub struct CapiSelection {
    set: SelectionSet,
    ic: InstrumentationConfig,
    names: Vec<CString>,
}
pub struct CapiIc(InstrumentationConfig);
pub struct CapiRegistry(RuntimeRegistry);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CapiStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<E: std::fmt::Display>(status: CapiStatus) -> impl Fn(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> CapiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CapiStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CapiStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(CapiStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CapiStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure(CapiStatus::NullArgument, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure(CapiStatus::NullArgument, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

fn into_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(fail(CapiStatus::InvalidUtf8))
}

unsafe fn free_box<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn capi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn capi_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// Packed ids

#[no_mangle]
pub unsafe extern "C" fn capi_pack_id(object_id: u32, function_id: u32, out: *mut u32) -> CapiStatus {
    guard(|| {
        let id = PackedFunctionId::pack(object_id, function_id).map_err(fail(CapiStatus::OutOfRange))?;
        put(out, id.raw(), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_unpack_id(id: u32, object_id: *mut u8, function_id: *mut u32) -> CapiStatus {
    guard(|| {
        let (o, f) = PackedFunctionId::from_raw(id).unpack();
        put(object_id, o, "object_id")?;
        put(function_id, f, "function_id")
    })
}

// Call graphs

#[no_mangle]
pub unsafe extern "C" fn capi_callgraph_load(path: *const c_char, out: *mut *mut CapiCallGraph) -> CapiStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let g = CallGraph::load(path).map_err(fail(CapiStatus::Parse))?;
        put(out, Box::into_raw(Box::new(CapiCallGraph(g))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_callgraph_from_json(json: *const c_char, out: *mut *mut CapiCallGraph) -> CapiStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let g = CallGraph::from_json(json).map_err(fail(CapiStatus::Parse))?;
        put(out, Box::into_raw(Box::new(CapiCallGraph(g))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_callgraph_node_count(graph: *const CapiCallGraph, out: *mut usize) -> CapiStatus {
    guard(|| put(out, ref_arg(graph, "graph")?.0.len(), "out"))
}

#[no_mangle]
pub unsafe extern "C" fn capi_callgraph_free(graph: *mut CapiCallGraph) {
    free_box(graph);
}

// Selection specs

/// Parses spec text. Imports resolve against `base_dir` (may be null) and
/// the directories in `CAPI_SPEC_PATH`.
#[no_mangle]
pub unsafe extern "C" fn capi_spec_parse(
    text: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut CapiPipeline,
) -> CapiStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let base = if base_dir.is_null() {
            None
        } else {
            Some(Path::new(str_arg(base_dir, "base_dir")?).join("<inline>"))
        };
        let p = parse_spec_named(text, "<inline>", base.as_deref(), &FsResolver::from_env())
            .map_err(fail(CapiStatus::Parse))?;
        put(out, Box::into_raw(Box::new(CapiPipeline(p))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_spec_load(path: *const c_char, out: *mut *mut CapiPipeline) -> CapiStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let p = parse_spec_file(path).map_err(fail(CapiStatus::Parse))?;
        put(out, Box::into_raw(Box::new(CapiPipeline(p))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_pipeline_free(pipeline: *mut CapiPipeline) {
    free_box(pipeline);
}

// Selections

/// Evaluates `pipeline` on `graph` (no inlining compensation).
#[no_mangle]
pub unsafe extern "C" fn capi_select(
    graph: *const CapiCallGraph,
    pipeline: *const CapiPipeline,
    out: *mut *mut CapiSelection,
) -> CapiStatus {
    guard(|| {
        let graph = &ref_arg(graph, "graph")?.0;
        let pipeline = &ref_arg(pipeline, "pipeline")?.0;
        let outcome = select(graph, pipeline, None).map_err(fail(CapiStatus::Evaluation))?;
        let set = outcome.compensation.selection;
        let names = set
            .functions
            .iter()
            .map(|n| CString::new(n.as_str()).map_err(fail(CapiStatus::InvalidUtf8)))
            .collect::<FfiResult<Vec<_>>>()?;
        let sel = CapiSelection {
            set,
            ic: outcome.ic,
            names,
        };
        put(out, Box::into_raw(Box::new(sel)), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_selection_len(selection: *const CapiSelection, out: *mut usize) -> CapiStatus {
    guard(|| put(out, ref_arg(selection, "selection")?.set.len(), "out"))
}

/// Name at `index` in sorted order. Borrowed from the selection.
#[no_mangle]
pub unsafe extern "C" fn capi_selection_name(
    selection: *const CapiSelection,
    index: usize,
    out: *mut *const c_char,
) -> CapiStatus {
    guard(|| {
        let sel = ref_arg(selection, "selection")?;
        let name = sel
            .names
            .get(index)
            .ok_or_else(|| Failure(CapiStatus::OutOfRange, format!("index {index} out of range")))?;
        put(out, name.as_ptr(), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_selection_contains(
    selection: *const CapiSelection,
    name: *const c_char,
    out: *mut bool,
) -> CapiStatus {
    guard(|| {
        let sel = ref_arg(selection, "selection")?;
        put(out, sel.set.functions.contains(str_arg(name, "name")?), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_selection_to_ic(selection: *const CapiSelection, out: *mut *mut CapiIc) -> CapiStatus {
    guard(|| {
        let sel = ref_arg(selection, "selection")?;
        put(out, Box::into_raw(Box::new(CapiIc(sel.ic.clone()))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_selection_free(selection: *mut CapiSelection) {
    free_box(selection);
}

// Instrumentation configurations

/// Loads an IC file; the format is detected from its content.
#[no_mangle]
pub unsafe extern "C" fn capi_ic_load(path: *const c_char, out: *mut *mut CapiIc) -> CapiStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let ic = load_ic(path).map_err(|e| match e {
            capi_core::icformat::IcError::Io { .. } => Failure(CapiStatus::Io, e.to_string()),
            _ => Failure(CapiStatus::Parse, e.to_string()),
        })?;
        put(out, Box::into_raw(Box::new(CapiIc(ic))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_ic_parse(text: *const c_char, out: *mut *mut CapiIc) -> CapiStatus {
    guard(|| {
        let ic = parse_ic(str_arg(text, "text")?).map_err(fail(CapiStatus::Parse))?;
        put(out, Box::into_raw(Box::new(CapiIc(ic))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_ic_len(ic: *const CapiIc, out: *mut usize) -> CapiStatus {
    guard(|| put(out, ref_arg(ic, "ic")?.0.len(), "out"))
}

/// Serializes the IC. Free the result with `capi_string_free`.
#[no_mangle]
pub unsafe extern "C" fn capi_ic_emit(ic: *const CapiIc, format: CapiIcFormat, out: *mut *mut c_char) -> CapiStatus {
    guard(|| {
        let ic = &ref_arg(ic, "ic")?.0;
        let text = match format {
            CapiIcFormat::ScorepFilter => emit_scorep_filter(ic, None),
            CapiIcFormat::Native => emit_native_ic(ic),
        };
        put(out, into_c_string(text)?, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_ic_free(ic: *mut CapiIc) {
    free_box(ic);
}

// Runtime registry

/// Registers every object of a layout file, main executable first.
/// Functions with fewer than `xray_threshold` statements get no sleds.
#[no_mangle]
pub unsafe extern "C" fn capi_registry_load(
    layout_path: *const c_char,
    xray_threshold: u64,
    out: *mut *mut CapiRegistry,
) -> CapiStatus {
    guard(|| {
        let path = str_arg(layout_path, "layout_path")?;
        let layout = ObjectLayout::load(path).map_err(fail(CapiStatus::Parse))?;
        let reg = registry_from_layout(&layout, RegistryOptions { xray_threshold }).map_err(fail(CapiStatus::Registry))?;
        put(out, Box::into_raw(Box::new(CapiRegistry(reg))), "out")
    })
}

/// Patches exactly the resolvable IC functions.
#[no_mangle]
pub unsafe extern "C" fn capi_registry_apply_ic(
    registry: *mut CapiRegistry,
    ic: *const CapiIc,
    summary: *mut CapiPatchSummary,
) -> CapiStatus {
    guard(|| {
        let ic = &ref_arg(ic, "ic")?.0;
        let reg = registry
            .as_mut()
            .ok_or_else(|| Failure(CapiStatus::NullArgument, "registry is null".into()))?;
        let report = reg.0.apply_ic(ic);
        if !summary.is_null() {
            summary.write(CapiPatchSummary {
                patched: report.patched,
                not_found: report.not_found.len(),
                skipped_unresolved: report.skipped_unresolved,
            });
        }
        Ok(())
    })
}

/// Packed id of a resolvable function.
#[no_mangle]
pub unsafe extern "C" fn capi_registry_resolve(
    registry: *const CapiRegistry,
    name: *const c_char,
    out: *mut u32,
) -> CapiStatus {
    guard(|| {
        let reg = &ref_arg(registry, "registry")?.0;
        let name = str_arg(name, "name")?;
        let id = reg
            .resolve(name)
            .ok_or_else(|| Failure(CapiStatus::NotFound, format!("`{name}` cannot be resolved")))?;
        put(out, id.raw(), "out")
    })
}

struct CallbackHandler {
    callback: unsafe extern "C" fn(*mut c_void, u32, CapiEventKind, u64, u64),
    user_data: *mut c_void,
}

// The caller promises that the callback and user_data may be used from any
// thread.
unsafe impl Send for CallbackHandler {}
unsafe impl Sync for CallbackHandler {}

impl EventHandler for CallbackHandler {
    fn handle(&self, e: &FunctionEvent) {
        let kind = match e.kind {
            EventKind::Entry => CapiEventKind::Entry,
            EventKind::Exit => CapiEventKind::Exit,
        };
        unsafe { (self.callback)(self.user_data, e.id.raw(), kind, e.thread, e.timestamp) }
    }
}

/// Installs `callback` as the handler; null removes it.
#[no_mangle]
pub unsafe extern "C" fn capi_registry_set_handler(
    registry: *mut CapiRegistry,
    callback: CapiEventCallback,
    user_data: *mut c_void,
) -> CapiStatus {
    guard(|| {
        let reg = registry
            .as_mut()
            .ok_or_else(|| Failure(CapiStatus::NullArgument, "registry is null".into()))?;
        match callback {
            Some(callback) => reg.0.set_handler(Arc::new(CallbackHandler { callback, user_data })),
            None => reg.0.clear_handler(),
        }
        Ok(())
    })
}

/// Runs the sled of function `id`. Unknown ids are counted and ignored.
#[no_mangle]
pub unsafe extern "C" fn capi_registry_dispatch(
    registry: *const CapiRegistry,
    id: u32,
    kind: CapiEventKind,
    thread: u64,
    timestamp: u64,
) -> CapiStatus {
    guard(|| {
        let reg = &ref_arg(registry, "registry")?.0;
        let kind = match kind {
            CapiEventKind::Entry => EventKind::Entry,
            CapiEventKind::Exit => EventKind::Exit,
        };
        reg.dispatch(PackedFunctionId::from_raw(id), kind, thread, timestamp);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn capi_registry_free(registry: *mut CapiRegistry) {
    free_box(registry);
}
