use std::fmt;

use thiserror::Error;

pub const OBJECT_ID_BITS: u32 = 8;
pub const FUNCTION_ID_BITS: u32 = 24;
pub const MAX_OBJECT_ID: u32 = (1 << OBJECT_ID_BITS) - 1;
pub const MAX_FUNCTION_ID: u32 = (1 << FUNCTION_ID_BITS) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("object id {0} out of range (0..={MAX_OBJECT_ID})")]
    ObjectOutOfRange(u32),
    #[error("function id {0} out of range (0..={MAX_FUNCTION_ID})")]
    FunctionOutOfRange(u32),
}

/// Global function identifier: object id in the high 8 bits, per-object
/// function id in the low 24. Object 0 (the main executable) therefore has
/// packed ids equal to its plain function ids.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PackedFunctionId(u32);

impl PackedFunctionId {
    pub fn pack(object_id: u32, function_id: u32) -> Result<Self, IdError> {
        if object_id > MAX_OBJECT_ID {
            return Err(IdError::ObjectOutOfRange(object_id));
        }
        if function_id > MAX_FUNCTION_ID {
            return Err(IdError::FunctionOutOfRange(function_id));
        }
        Ok(PackedFunctionId((object_id << FUNCTION_ID_BITS) | function_id))
    }

    /// Every 32-bit value is a valid packed id.
    pub const fn from_raw(raw: u32) -> Self {
        PackedFunctionId(raw)
    }

    pub const fn raw(self) -> u32 {
        self.0
    }

    pub const fn object_id(self) -> u8 {
        (self.0 >> FUNCTION_ID_BITS) as u8
    }

    pub const fn function_id(self) -> u32 {
        self.0 & MAX_FUNCTION_ID
    }

    pub const fn unpack(self) -> (u8, u32) {
        (self.object_id(), self.function_id())
    }
}

impl fmt::Debug for PackedFunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PackedFunctionId({}:{})", self.object_id(), self.function_id())
    }
}

impl fmt::Display for PackedFunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
