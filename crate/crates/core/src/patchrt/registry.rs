use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use super::id::{PackedFunctionId, MAX_FUNCTION_ID, MAX_OBJECT_ID};
use super::layout::{ObjectImage, ObjectSymbol, EXIT_SLED_OFFSET, FUNCTION_SLOT_BYTES};
use super::{EventHandler, EventKind, FunctionEvent, RegistryError};
use crate::icformat::InstrumentationConfig;

/// Each object is loaded into its own window of this size.
pub const OBJECT_WINDOW_BITS: u32 = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SledKind {
    Entry,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SledState {
    Nop,
    Patched,
}

/// A patch point. The state flips atomically so concurrent dispatchers see
/// either NOP or PATCHED.
#[derive(Debug)]
pub struct Sled {
    pub owner: PackedFunctionId,
    pub kind: SledKind,
    pub address: u64,
    patched: AtomicBool,
}

impl Sled {
    fn new(owner: PackedFunctionId, kind: SledKind, address: u64) -> Self {
        Sled {
            owner,
            kind,
            address,
            patched: AtomicBool::new(false),
        }
    }

    #[inline]
    pub fn state(&self) -> SledState {
        if self.patched.load(Ordering::Acquire) {
            SledState::Patched
        } else {
            SledState::Nop
        }
    }

    /// NOP -> PATCHED. Returns false if already patched.
    pub fn patch(&self) -> bool {
        self.patched
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }

    /// PATCHED -> NOP. Returns false if already a NOP.
    pub fn unpatch(&self) -> bool {
        self.patched
            .compare_exchange(true, false, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }
}

#[derive(Debug)]
pub struct FunctionSleds {
    pub name: String,
    pub demangled: Option<String>,
    pub entry: Sled,
    pub exit: Sled,
}

impl FunctionSleds {
    fn patch(&self) {
        self.entry.patch();
        self.exit.patch();
    }

    fn unpatch(&self) {
        self.entry.unpatch();
        self.exit.unpatch();
    }

    pub fn is_patched(&self) -> bool {
        self.entry.state() == SledState::Patched || self.exit.state() == SledState::Patched
    }
}

/// A registered object with its sled table. Function ids are dense.
#[derive(Debug)]
pub struct PatchableObject {
    pub name: String,
    pub object_id: u8,
    pub base_address: u64,
    pub functions: Vec<FunctionSleds>,
    resolved: Vec<(String, PackedFunctionId)>,
    hidden: Vec<String>,
    unresolved: usize,
}

impl PatchableObject {
    pub fn function_count(&self) -> usize {
        self.functions.len()
    }

    pub fn unresolved(&self) -> usize {
        self.unresolved
    }
}

/// Outcome of applying an instrumentation configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatchReport {
    pub patched: usize,
    pub not_found: Vec<String>,
    /// Members of `not_found` whose symbol exists but is hidden.
    pub skipped_unresolved: usize,
}

/// What the runtime knows about a function when reporting events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionInfo {
    pub address: u64,
    /// Name recovered from the symbol table; `None` for hidden or missing symbols.
    pub name: Option<String>,
    pub demangled: Option<String>,
}

/// Snapshot of id-to-function information used by measurement backends.
#[derive(Debug, Clone, Default)]
pub struct FunctionTable {
    entries: HashMap<PackedFunctionId, FunctionInfo>,
}

impl FunctionTable {
    pub fn get(&self, id: PackedFunctionId) -> Option<&FunctionInfo> {
        self.entries.get(&id)
    }

    /// Resolved name, or `unknown@<addr>` when the symbol could not be resolved.
    pub fn label(&self, id: PackedFunctionId) -> String {
        match self.entries.get(&id) {
            Some(FunctionInfo { name: Some(n), .. }) => n.clone(),
            Some(info) => format!("unknown@{:#x}", info.address),
            None => format!("unknown@id{}", id.raw()),
        }
    }

    /// Demangled name if known, else the resolved name, else `unknown@<addr>`.
    pub fn display_label(&self, id: PackedFunctionId) -> String {
        match self.entries.get(&id) {
            Some(FunctionInfo {
                name: Some(_),
                demangled: Some(d),
                ..
            }) => d.clone(),
            _ => self.label(id),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegistryOptions {
    /// Functions with fewer statements get no sleds.
    pub xray_threshold: u64,
}

impl Default for RegistryOptions {
    fn default() -> Self {
        RegistryOptions { xray_threshold: 1 }
    }
}

/// Registered objects, name resolution and the installed event handler.
pub struct RuntimeRegistry {
    options: RegistryOptions,
    objects: Vec<Option<PatchableObject>>,
    /// Names recovered through symbol address translation.
    name_index: HashMap<String, PackedFunctionId>,
    /// Names of hidden symbols; they cannot be resolved.
    hidden_names: HashSet<String>,
    /// Ground-truth function identity of every sled, as compiled in.
    sled_identity: HashMap<String, PackedFunctionId>,
    handler: Option<Arc<dyn EventHandler>>,
    malformed_events: AtomicU64,
}

impl Default for RuntimeRegistry {
    fn default() -> Self {
        RuntimeRegistry::new(RegistryOptions::default())
    }
}

impl std::fmt::Debug for RuntimeRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RuntimeRegistry")
            .field("objects", &self.live_objects().map(|o| (o.object_id, &o.name)).collect::<Vec<_>>())
            .field("resolved", &self.name_index.len())
            .field("unresolved", &self.unresolved())
            .finish()
    }
}

impl RuntimeRegistry {
    pub fn new(options: RegistryOptions) -> Self {
        RuntimeRegistry {
            options,
            objects: (0..=MAX_OBJECT_ID).map(|_| None).collect(),
            name_index: HashMap::new(),
            hidden_names: HashSet::new(),
            sled_identity: HashMap::new(),
            handler: None,
            malformed_events: AtomicU64::new(0),
        }
    }

    pub fn options(&self) -> RegistryOptions {
        self.options
    }

    pub fn base_address(object_id: u8) -> u64 {
        (object_id as u64 + 1) << OBJECT_WINDOW_BITS
    }

    /// Registers an object and resolves its functions through `symbols`.
    ///
    /// The first registration is the main executable and gets id 0; later
    /// ones take the lowest free id in 1..=255. Symbol addresses are moved
    /// to the object's base and matched against entry sled addresses.
    pub fn register_object(&mut self, image: &ObjectImage, symbols: &[ObjectSymbol]) -> Result<u8, RegistryError> {
        if self.live_objects().any(|o| o.name == image.name) {
            return Err(RegistryError::DuplicateObject(image.name.clone()));
        }
        let object_id = if self.objects[0].is_none() {
            0u8
        } else {
            (1..=MAX_OBJECT_ID as usize)
                .find(|&i| self.objects[i].is_none())
                .ok_or(RegistryError::RegistryFull)? as u8
        };

        let base = Self::base_address(object_id);
        let mut functions = Vec::new();
        let mut by_entry_address = HashMap::new();
        for (slot, f) in image.functions.iter().enumerate() {
            if f.num_statements < self.options.xray_threshold {
                continue;
            }
            let fid = functions.len() as u32;
            if fid > MAX_FUNCTION_ID {
                return Err(RegistryError::TooManyFunctions(image.name.clone()));
            }
            let id = PackedFunctionId::pack(object_id as u32, fid).expect("ids checked above");
            let addr = base + slot as u64 * FUNCTION_SLOT_BYTES;
            by_entry_address.insert(addr, functions.len());
            functions.push(FunctionSleds {
                name: f.name.clone(),
                demangled: f.demangled.clone(),
                entry: Sled::new(id, SledKind::Entry, addr),
                exit: Sled::new(id, SledKind::Exit, addr + EXIT_SLED_OFFSET),
            });
        }

        let mut resolved = Vec::new();
        let mut hidden = Vec::new();
        for sym in symbols {
            let Some(&idx) = by_entry_address.get(&(base + sym.local_address)) else {
                continue;
            };
            if sym.hidden {
                log::warn!("{}: hidden symbol `{}` cannot be resolved", image.name, sym.name);
                hidden.push(sym.name.clone());
            } else {
                resolved.push((sym.name.clone(), functions[idx].entry.owner));
            }
        }
        let unresolved = functions.len() - resolved.len();
        if unresolved > hidden.len() {
            log::warn!(
                "{}: {} instrumented function(s) have no symbol",
                image.name,
                unresolved - hidden.len()
            );
        }

        self.objects[object_id as usize] = Some(PatchableObject {
            name: image.name.clone(),
            object_id,
            base_address: base,
            functions,
            resolved,
            hidden,
            unresolved,
        });
        self.rebuild_indices();
        Ok(object_id)
    }

    /// Forces the object's sleds to NOP and frees its id. Object 0 cannot be removed.
    pub fn unregister_object(&mut self, object_id: u8) -> Result<(), RegistryError> {
        if object_id == 0 {
            return Err(RegistryError::ReservedObject);
        }
        let obj = self.objects[object_id as usize]
            .take()
            .ok_or(RegistryError::UnknownObject(object_id))?;
        for f in &obj.functions {
            f.unpatch();
        }
        self.rebuild_indices();
        Ok(())
    }

    fn rebuild_indices(&mut self) {
        self.name_index.clear();
        self.hidden_names.clear();
        self.sled_identity.clear();
        for obj in self.objects.iter().flatten() {
            for (name, id) in &obj.resolved {
                if let Some(prev) = self.name_index.get(name) {
                    if prev.object_id() != id.object_id() {
                        log::warn!("`{name}` defined in several objects; using object {}", prev.object_id());
                    }
                    continue;
                }
                self.name_index.insert(name.clone(), *id);
            }
            self.hidden_names.extend(obj.hidden.iter().cloned());
            for f in &obj.functions {
                self.sled_identity.entry(f.name.clone()).or_insert(f.entry.owner);
            }
        }
    }

    pub fn live_objects(&self) -> impl Iterator<Item = &PatchableObject> {
        self.objects.iter().flatten()
    }

    pub fn object(&self, object_id: u8) -> Option<&PatchableObject> {
        self.objects[object_id as usize].as_ref()
    }

    pub fn object_count(&self) -> usize {
        self.live_objects().count()
    }

    /// Number of instrumented functions whose names could not be resolved.
    pub fn unresolved(&self) -> usize {
        self.live_objects().map(|o| o.unresolved).sum()
    }

    pub fn resolve(&self, name: &str) -> Option<PackedFunctionId> {
        self.name_index.get(name).copied()
    }

    pub fn resolved_names(&self) -> BTreeSet<String> {
        self.name_index.keys().cloned().collect()
    }

    /// Identity of a function's sleds regardless of symbol visibility.
    pub fn sled_id(&self, name: &str) -> Option<PackedFunctionId> {
        self.sled_identity.get(name).copied()
    }

    pub fn function(&self, id: PackedFunctionId) -> Option<&FunctionSleds> {
        let (o, f) = id.unpack();
        self.objects[o as usize].as_ref()?.functions.get(f as usize)
    }

    /// Patches exactly the resolvable IC functions; everything else becomes NOP.
    pub fn apply_ic(&mut self, ic: &InstrumentationConfig) -> PatchReport {
        self.unpatch_all();
        let mut report = PatchReport::default();
        for name in &ic.include {
            match self.name_index.get(name).and_then(|&id| self.function(id)) {
                Some(f) => {
                    f.patch();
                    report.patched += 1;
                }
                None => {
                    if self.hidden_names.contains(name) {
                        report.skipped_unresolved += 1;
                    }
                    report.not_found.push(name.clone());
                }
            }
        }
        report
    }

    /// Patches every sled, resolved or not.
    pub fn patch_all(&self) -> usize {
        let mut n = 0;
        for f in self.live_objects().flat_map(|o| o.functions.iter()) {
            f.patch();
            n += 1;
        }
        n
    }

    pub fn unpatch_all(&self) {
        for f in self.live_objects().flat_map(|o| o.functions.iter()) {
            f.unpatch();
        }
    }

    /// Ground-truth names of functions with at least one patched sled.
    pub fn patched_functions(&self) -> BTreeSet<String> {
        self.live_objects()
            .flat_map(|o| o.functions.iter())
            .filter(|f| f.is_patched())
            .map(|f| f.name.clone())
            .collect()
    }

    pub fn set_handler(&mut self, handler: Arc<dyn EventHandler>) {
        self.handler = Some(handler);
    }

    pub fn clear_handler(&mut self) {
        self.handler = None;
    }

    pub fn function_table(&self) -> FunctionTable {
        let resolved: HashMap<PackedFunctionId, &str> = self.name_index.iter().map(|(n, id)| (*id, n.as_str())).collect();
        let mut entries = HashMap::new();
        for f in self.live_objects().flat_map(|o| o.functions.iter()) {
            let id = f.entry.owner;
            let name = resolved.get(&id).map(|n| n.to_string());
            entries.insert(
                id,
                FunctionInfo {
                    address: f.entry.address,
                    demangled: name.as_ref().and(f.demangled.clone()),
                    name,
                },
            );
        }
        FunctionTable { entries }
    }

    /// Runs an instrumentation point. Patched sleds forward to the handler;
    /// NOP sleds do nothing. Unknown ids are counted and dropped.
    #[inline]
    pub fn dispatch(&self, id: PackedFunctionId, kind: EventKind, thread: u64, timestamp: u64) {
        let (o, f) = id.unpack();
        let sleds = match self.objects[o as usize].as_ref().and_then(|obj| obj.functions.get(f as usize)) {
            Some(s) => s,
            None => {
                self.malformed_events.fetch_add(1, Ordering::Relaxed);
                return;
            }
        };
        let sled = match kind {
            EventKind::Entry => &sleds.entry,
            EventKind::Exit => &sleds.exit,
        };
        if sled.state() == SledState::Patched {
            if let Some(h) = &self.handler {
                h.handle(&FunctionEvent {
                    id,
                    kind,
                    thread,
                    timestamp,
                });
            }
        }
    }

    pub fn malformed_events(&self) -> u64 {
        self.malformed_events.load(Ordering::Relaxed)
    }

    /// Comparable summary used to check that registration sequences are
    /// observationally equivalent.
    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            objects: self
                .live_objects()
                .map(|o| (o.object_id, o.name.clone(), o.base_address, o.function_count()))
                .collect(),
            name_index: self.name_index.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            unresolved: self.unresolved(),
            patched: self.patched_functions(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrySnapshot {
    pub objects: Vec<(u8, String, u64, usize)>,
    pub name_index: BTreeMap<String, PackedFunctionId>,
    pub unresolved: usize,
    pub patched: BTreeSet<String>,
}
