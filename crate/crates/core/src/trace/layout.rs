use serde::{Deserialize, Serialize};

/// Number of feature slots describing one instruction column.
pub const SLOTS_PER_INSTRUCTION: usize = 50;

// Slot offsets inside one column.
pub const OP_OFFSET: usize = 0;
pub const SRC_OFFSET: usize = 13;
pub const DST_OFFSET: usize = 21;
pub const HISTORY_OFFSET: usize = 27;
pub const RESIDENCE_SLOT: usize = 41;
pub const EXECUTION_SLOT: usize = 42;
pub const STORE_SLOT: usize = 43;
pub const FLAGS_OFFSET: usize = 44;
pub const RESERVED_SLOT: usize = 49;

pub const DEFAULT_MAX_CONTEXT: usize = 110;

/// Column layout of a predictor input: one target column followed by up to
/// `max_context` context columns of 50 slots each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub max_context: usize,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        FeatureLayout {
            max_context: DEFAULT_MAX_CONTEXT,
        }
    }
}

impl FeatureLayout {
    pub const SLOTS: usize = SLOTS_PER_INSTRUCTION;

    pub fn new(max_context: usize) -> FeatureLayout {
        FeatureLayout { max_context }
    }

    pub fn columns(&self) -> usize {
        self.max_context + 1
    }

    pub fn width(&self) -> usize {
        SLOTS_PER_INSTRUCTION * self.columns()
    }
}
