use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RegistryError;
use crate::postprocess::{SymbolEntry, SymbolTable};

/// Byte distance between consecutive function slots in an object image.
pub const FUNCTION_SLOT_BYTES: u64 = 16;
/// Offset of the exit sled inside a function slot.
pub const EXIT_SLED_OFFSET: u64 = 8;

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

/// One function compiled into an object, in function-id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FunctionImage {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demangled: Option<String>,
    #[serde(default = "one")]
    pub num_statements: u64,
    /// Symbol exists but has hidden visibility.
    #[serde(default)]
    pub hidden: bool,
    /// Whether the object's symbol table lists the function at all.
    #[serde(default = "yes")]
    pub symbol: bool,
}

impl FunctionImage {
    pub fn new(name: impl Into<String>) -> Self {
        FunctionImage {
            name: name.into(),
            demangled: None,
            num_statements: 1,
            hidden: false,
            symbol: true,
        }
    }

    pub fn hidden(mut self) -> Self {
        self.hidden = true;
        self
    }
}

/// Static view of a loadable object: its functions in layout order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectImage {
    pub name: String,
    pub functions: Vec<FunctionImage>,
}

/// A symbol as listed for one object, address relative to the object's base.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSymbol {
    pub name: String,
    pub local_address: u64,
    pub hidden: bool,
}

impl ObjectImage {
    pub fn new(name: impl Into<String>, functions: Vec<FunctionImage>) -> Self {
        ObjectImage {
            name: name.into(),
            functions,
        }
    }

    /// Synthetic `nm` listing: function slot `i` sits at `16 * i`.
    pub fn symbols(&self) -> Vec<ObjectSymbol> {
        self.functions
            .iter()
            .enumerate()
            .filter(|(_, f)| f.symbol)
            .map(|(i, f)| ObjectSymbol {
                name: f.name.clone(),
                local_address: i as u64 * FUNCTION_SLOT_BYTES,
                hidden: f.hidden,
            })
            .collect()
    }
}

/// Object fixture: the main executable first, then shared objects.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectLayout {
    pub objects: Vec<ObjectImage>,
}

impl ObjectLayout {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| RegistryError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        serde_json::from_str(text).map_err(|e| RegistryError::Fixture(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    /// Symbol table of all objects as `nm` would list it.
    pub fn symbol_table(&self) -> SymbolTable {
        let mut table = SymbolTable {
            objects: self.objects.iter().map(|o| o.name.clone()).collect(),
            ..Default::default()
        };
        for obj in &self.objects {
            for s in obj.symbols() {
                table.entries.entry(s.name).or_insert(SymbolEntry {
                    object_name: obj.name.clone(),
                    local_address: s.local_address,
                    hidden: s.hidden,
                });
            }
        }
        table
    }
}
