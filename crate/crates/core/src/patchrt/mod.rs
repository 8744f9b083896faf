//! Simulated patchable runtime.
//!
//! Objects (the main executable and shared libraries) are registered with a
//! packed object/function id space. Each instrumented function carries an
//! entry and an exit sled that is either a NOP or patched; dispatching an
//! event through a patched sled reaches the installed handler.

mod id;
mod layout;
mod registry;

use std::env;

use thiserror::Error;

pub use id::{IdError, PackedFunctionId, FUNCTION_ID_BITS, MAX_FUNCTION_ID, MAX_OBJECT_ID, OBJECT_ID_BITS};
pub use layout::{FunctionImage, ObjectImage, ObjectLayout, ObjectSymbol, EXIT_SLED_OFFSET, FUNCTION_SLOT_BYTES};
pub use registry::{
    FunctionInfo, FunctionSleds, FunctionTable, PatchReport, PatchableObject, RegistryOptions, RegistrySnapshot,
    RuntimeRegistry, Sled, SledKind, SledState, OBJECT_WINDOW_BITS,
};

use crate::icformat::{load_ic, IcError, InstrumentationConfig};

/// Environment variable naming the IC file applied at startup.
pub const FILTERING_FILE_ENV: &str = "CAPI_FILTERING_FILE";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("registry full: all {MAX_OBJECT_ID} shared-object ids are in use")]
    RegistryFull,
    #[error("object `{0}` is already registered")]
    DuplicateObject(String),
    #[error("no object with id {0} is registered")]
    UnknownObject(u8),
    #[error("object 0 (main executable) cannot be unregistered")]
    ReservedObject,
    #[error("object `{0}` has more functions than a packed id can address")]
    TooManyFunctions(String),
    #[error("malformed object fixture: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Entry,
    Exit,
}

/// What a patched sled passes to the handler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FunctionEvent {
    pub id: PackedFunctionId,
    pub kind: EventKind,
    pub thread: u64,
    pub timestamp: u64,
}

/// Receives events from patched sleds. May be called from many threads.
pub trait EventHandler: Send + Sync {
    fn handle(&self, event: &FunctionEvent);
}

/// Loads the IC named by `CAPI_FILTERING_FILE`, if set.
pub fn ic_from_env() -> Result<Option<InstrumentationConfig>, IcError> {
    match env::var_os(FILTERING_FILE_ENV) {
        Some(path) if !path.is_empty() => load_ic(path).map(Some),
        _ => Ok(None),
    }
}

/// Registers every object of a layout, main executable first.
pub fn registry_from_layout(layout: &ObjectLayout, options: RegistryOptions) -> Result<RuntimeRegistry, RegistryError> {
    let mut reg = RuntimeRegistry::new(options);
    for obj in &layout.objects {
        reg.register_object(obj, &obj.symbols())?;
    }
    Ok(reg)
}
