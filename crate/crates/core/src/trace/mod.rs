//! Instruction-level domain types, the per-instruction feature layout and the
//! binary trace file format.

mod file;
mod layout;
mod types;

pub use file::*;
pub use layout::*;
pub use types::*;
