use std::collections::HashMap;
use std::sync::Mutex;

use crate::patchrt::{EventHandler, FunctionEvent, PackedFunctionId};

/// Counts events per function.
#[derive(Debug, Default)]
pub struct CountingHandler {
    counts: Mutex<HashMap<PackedFunctionId, u64>>,
}

impl CountingHandler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, id: PackedFunctionId) -> u64 {
        self.counts.lock().expect("counts lock").get(&id).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.lock().expect("counts lock").values().sum()
    }

    pub fn reset(&self) {
        self.counts.lock().expect("counts lock").clear();
    }
}

impl EventHandler for CountingHandler {
    fn handle(&self, event: &FunctionEvent) {
        *self.counts.lock().expect("counts lock").entry(event.id).or_insert(0) += 1;
    }
}
